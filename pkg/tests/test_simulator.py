"""Swing-equation simulator tests.

The hand oracles come from the aggregate form of the dynamics: with
governors disabled the center-of-inertia speed ramps at -dP/(2 H_sys), and
with droop active it settles at -dP/(K + D). Both are checked on small
lossless machine groups where the identities are exact.
"""

import numpy as np
import pytest

from conftest import two_machine_lossless
from freqcast.network import Branch, Bus, Generator, PowerNetwork
from freqcast.simulator import (
    FrequencyFeatures,
    GeneratorTrip,
    LoadStep,
    Scenario,
    SimulationTrace,
    build_dynamic_model,
    extract_frequency_features,
    generate_scenario_set,
    load_dataset,
    machine_response,
    save_dataset,
    simulate,
    snapshot_features,
)


def coasting_trio() -> PowerNetwork:
    """Three lossless machines on a star, no droop, no damping.

    System-base inertias are 2, 3 and 0.5 s; tripping the third machine
    (0.1 pu output) leaves 5 s behind, so the coasting response is
    dw/dt = -0.1 / (2 * 5) = -0.01 pu/s.
    """
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=(
            Bus(1, "slack"),
            Bus(2, "pv"),
            Bus(3, "pv"),
            Bus(4, "pq", load_p=0.6, load_q=0.1),
        ),
        branches=(
            Branch(1, 4, resistance=0.0, reactance=0.1),
            Branch(2, 4, resistance=0.0, reactance=0.12),
            Branch(3, 4, resistance=0.0, reactance=0.15),
        ),
        generators=(
            Generator(1, p_mech=0.3, p_max=1.0, inertia_h=2.0, damping_d=0.0,
                      droop_gain=0.0, governor_tc=4.0, xd_prime=0.1),
            Generator(2, p_mech=0.2, p_max=1.0, inertia_h=3.0, damping_d=0.0,
                      droop_gain=0.0, governor_tc=4.0, xd_prime=0.1),
            Generator(3, p_mech=0.1, p_max=0.5, inertia_h=1.0, damping_d=0.0,
                      droop_gain=0.0, governor_tc=4.0, xd_prime=0.2),
        ),
    )


def symmetric_trio() -> PowerNetwork:
    """Equal reactance from every machine to the load bus and an even
    dispatch, so the machine angles coincide and the linearized coupling
    matrix is exactly symmetric. No droop, no damping."""
    gen = dict(p_max=1.0, damping_d=0.0, droop_gain=0.0, governor_tc=4.0,
               xd_prime=0.1)
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=(
            Bus(1, "slack"),
            Bus(2, "pv"),
            Bus(3, "pv"),
            Bus(4, "pq", load_p=0.6, load_q=0.1),
        ),
        branches=(
            Branch(1, 4, resistance=0.0, reactance=0.1),
            Branch(2, 4, resistance=0.0, reactance=0.1),
            Branch(3, 4, resistance=0.0, reactance=0.1),
        ),
        generators=(
            Generator(1, p_mech=0.2, inertia_h=2.0, **gen),
            Generator(2, p_mech=0.2, inertia_h=3.0, **gen),
            Generator(3, p_mech=0.2, inertia_h=0.5, **gen),
        ),
    )


def droop_pair() -> PowerNetwork:
    """Two governed machines feeding one load bus; aggregate droop gain 20
    and aggregate damping 1 on the system base."""
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=(
            Bus(1, "slack"),
            Bus(2, "pv"),
            Bus(3, "pq", load_p=0.5, load_q=0.05),
        ),
        branches=(
            Branch(1, 3, resistance=0.0, reactance=0.1),
            Branch(2, 3, resistance=0.0, reactance=0.12),
        ),
        generators=(
            Generator(1, p_mech=0.25, p_max=1.0, inertia_h=4.0, damping_d=0.5,
                      droop_gain=10.0, governor_tc=2.0, xd_prime=0.1),
            Generator(2, p_mech=0.25, p_max=1.0, inertia_h=5.0, damping_d=0.5,
                      droop_gain=10.0, governor_tc=2.0, xd_prime=0.1),
        ),
    )


class TestEquilibrium:
    def test_no_disturbance_stays_at_nominal(self):
        model = build_dynamic_model(two_machine_lossless(), 1.0)
        trace = simulate(model, Scenario(1.0, None), horizon=5.0)
        assert np.max(np.abs(trace.coi_hz - 60.0)) <= 1e-9

    def test_derivatives_zero_at_operating_point(self):
        model = build_dynamic_model(droop_pair(), 0.8)
        trace = simulate(model, Scenario(0.8, None), horizon=1.0)
        assert np.max(np.abs(trace.omega_dev)) <= 1e-10
        assert np.max(np.abs(trace.p_mech - trace.p_mech[0])) <= 1e-10

    def test_model_is_balanced(self):
        model = build_dynamic_model(coasting_trio(), 1.0)
        np.testing.assert_allclose(model.p_elec0, model.p_mech0)
        np.testing.assert_allclose(model.p_elec0, [0.3, 0.2, 0.1], atol=1e-9)

    def test_coupling_symmetric_for_coinciding_angles(self):
        model = build_dynamic_model(symmetric_trio(), 1.0)
        np.testing.assert_allclose(model.coupling, model.coupling.T,
                                   atol=1e-12)
        assert np.all(np.diag(model.coupling) == 0.0)
        assert np.all(model.coupling[~np.eye(3, dtype=bool)] > 0.0)

    def test_coupling_positive_between_nearby_machines(self):
        model = build_dynamic_model(coasting_trio(), 1.0)
        assert np.all(np.diag(model.coupling) == 0.0)
        assert np.all(model.coupling[~np.eye(3, dtype=bool)] > 0.0)
        # load conductances leak into the reduction, so only near-symmetry
        np.testing.assert_allclose(model.coupling, model.coupling.T,
                                   rtol=5e-3)


class TestCoastingResponse:
    def test_trip_rocof_matches_aggregate_inertia(self):
        model = build_dynamic_model(coasting_trio(), 1.0)
        trace = simulate(model, Scenario(1.0, GeneratorTrip(3)),
                         dt=0.01, horizon=1.0)
        rocof_pu = (trace.coi_omega_pu[3] - trace.coi_omega_pu[0]) / 0.03
        assert rocof_pu == pytest.approx(-0.01, rel=0.02)
        rocof_hz = 60.0 * rocof_pu
        assert rocof_hz == pytest.approx(-0.6, rel=0.02)

    def test_tripped_machine_leaves_the_trace(self):
        model = build_dynamic_model(coasting_trio(), 1.0)
        trace = simulate(model, Scenario(1.0, GeneratorTrip(3)),
                         dt=0.01, horizon=1.0)
        assert trace.in_service.tolist() == [True, True, False]
        assert np.all(trace.p_elec[1:, 2] == 0.0)
        assert trace.shares[2] == 0.0
        assert trace.shares.sum() == pytest.approx(0.1, abs=1e-12)

    def test_inertia_weighted_energy_drain_is_exact(self):
        model = build_dynamic_model(symmetric_trio(), 1.0)
        trace = simulate(model, Scenario(1.0, LoadStep(4, 0.05)),
                         dt=0.01, horizon=5.0)
        e = (trace.omega_dev * model.inertia).sum(axis=1)
        slopes = np.diff(e) / trace.dt
        np.testing.assert_allclose(slopes, -0.025, atol=1e-6)


class TestGovernedResponse:
    def test_steady_state_deviation_matches_droop(self):
        model = build_dynamic_model(droop_pair(), 1.0)
        trace = simulate(model, Scenario(1.0, LoadStep(3, 0.1)), horizon=60.0)
        assert trace.coi_omega_pu[-1] == pytest.approx(-0.1 / 21.0, abs=1e-3)
        feats = extract_frequency_features(trace)
        assert feats.steady_state_hz == pytest.approx(
            60.0 * (1.0 - 0.1 / 21.0), abs=0.06
        )
        assert feats.nadir_hz <= feats.steady_state_hz <= 60.0

    def test_nadir_stable_under_halved_step(self):
        model = build_dynamic_model(droop_pair(), 1.0)
        sc = Scenario(1.0, LoadStep(3, 0.1))
        f_coarse = extract_frequency_features(
            simulate(model, sc, dt=0.01, horizon=30.0)
        )
        f_fine = extract_frequency_features(
            simulate(model, sc, dt=0.005, horizon=30.0)
        )
        assert abs(f_coarse.nadir_hz - f_fine.nadir_hz) < 1e-4

    def test_mechanical_power_respects_the_ceiling(self):
        net = droop_pair()
        model = build_dynamic_model(net, 1.0)
        trace = simulate(model, Scenario(1.0, LoadStep(3, 0.2)), horizon=30.0)
        assert np.all(trace.p_mech[:, trace.in_service] <= 1.0 + 1e-12)

    def test_bigger_trip_digs_deeper(self, ieee39):
        model = build_dynamic_model(ieee39, 0.9)
        small = extract_frequency_features(
            simulate(model, Scenario(0.9, GeneratorTrip(30)))
        )
        large = extract_frequency_features(
            simulate(model, Scenario(0.9, GeneratorTrip(39)))
        )
        assert large.nadir_hz < small.nadir_hz < 60.0


class TestFrequencyFeatures:
    def test_nadir_picks_the_series_minimum(self):
        hz = np.array([60.0, 59.7, 59.8, 59.9, 59.95])
        times = np.arange(5) * 0.01
        trace = SimulationTrace(
            scenario=Scenario(1.0, None),
            times=times,
            delta=np.zeros((5, 2)),
            omega_dev=np.zeros((5, 2)),
            p_mech=np.zeros((5, 2)),
            p_elec=np.zeros((5, 2)),
            coi_omega_pu=hz / 60.0 - 1.0,
            coi_hz=hz,
            in_service=np.array([True, True]),
            shares=np.zeros(2),
            tf_network=two_machine_lossless(),
            dt=0.01,
        )
        feats = extract_frequency_features(trace)
        assert feats.nadir_hz == 59.7
        assert feats.nadir_time_s == pytest.approx(0.01)
        assert feats.steady_state_hz == pytest.approx(59.87)


class TestMachineResponse:
    def test_two_machine_hand_value(self):
        f = machine_response([0.4, 0.5], [0.5, 0.5], [5.0, 10.0])
        assert f[0] == pytest.approx(-0.006667, abs=1e-6)
        assert f[1] == pytest.approx(0.003333, abs=1e-6)

    def test_identical_machines_share_equally(self):
        f = machine_response([0.4, 0.4, 0.4], [0.5, 0.5, 0.5],
                             [6.0, 6.0, 6.0])
        np.testing.assert_allclose(f, 0.0, atol=1e-15)

    def test_inertia_weighted_sum_vanishes(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            inertia = rng.uniform(0.5, 50.0, n)
            f = machine_response(rng.uniform(0.0, 1.0, n),
                                 rng.uniform(0.0, 1.0, n), inertia)
            assert abs((2.0 * inertia * f).sum()) < 1e-9

    def test_out_of_service_slots_stay_zero(self):
        mask = np.array([True, False, True])
        f = machine_response([0.5, 0.9, 0.2], [0.6, 0.0, 0.2],
                             [2.0, 99.0, 3.0], mask)
        assert f[1] == 0.0
        assert abs(2.0 * 2.0 * f[0] + 2.0 * 3.0 * f[2]) < 1e-12


class TestSnapshots:
    def test_load_step_lands_in_the_tf_load_vector(self):
        net = droop_pair()
        model = build_dynamic_model(net, 1.0)
        sc = Scenario(1.0, LoadStep(3, 0.1))
        trace = simulate(model, sc, horizon=1.0)
        snap = snapshot_features(model, trace, sc)
        i = list(snap.bus_ids).index(3)
        assert snap.load_p_tf[i] - snap.load_p_t0[i] == pytest.approx(0.1)
        untouched = snap.bus_ids != 3
        np.testing.assert_allclose(snap.load_p_tf[untouched],
                                   snap.load_p_t0[untouched])

    def test_trip_zeroes_the_machine_and_moves_voltages(self, ieee39):
        model = build_dynamic_model(ieee39, 0.8)
        sc = Scenario(0.8, GeneratorTrip(38))
        trace = simulate(model, sc, horizon=1.0)
        snap = snapshot_features(model, trace, sc)
        pos = list(snap.gen_bus_ids).index(38)
        assert snap.gen_p_elec_tf[pos] == 0.0
        assert snap.gen_p_mech_tf[pos] == 0.0
        assert snap.gen_reserve_tf[pos] == 0.0
        assert snap.gen_shortage_tf[pos] == 0.0
        assert snap.gen_shortage_tf.sum() == pytest.approx(
            model.p_elec0[pos], abs=1e-9
        )
        assert np.max(np.abs(snap.bus_voltage_tf - snap.bus_voltage_t0)) > 1e-6

    def test_reserves_never_negative(self):
        net = droop_pair()
        model = build_dynamic_model(net, 1.0)
        sc = Scenario(1.0, LoadStep(3, 0.2))
        trace = simulate(model, sc, horizon=1.0)
        snap = snapshot_features(model, trace, sc)
        assert np.all(snap.gen_reserve_t0 >= 0.0)
        assert np.all(snap.gen_reserve_tf >= 0.0)

    def test_response_identity_on_real_snapshot(self, ieee39):
        model = build_dynamic_model(ieee39, 0.75)
        sc = Scenario(0.75, GeneratorTrip(32))
        trace = simulate(model, sc, horizon=1.0)
        snap = snapshot_features(model, trace, sc)
        weighted = 2.0 * model.inertia * snap.gen_response_tf
        assert abs(weighted[trace.in_service].sum()) < 1e-9


@pytest.fixture(scope="module")
def batch(ieee39):
    return generate_scenario_set(ieee39, 20, seed=11)


class TestScenarioSet:

    def test_nothing_excluded_and_count_preserved(self, batch):
        results, exclusions = batch
        assert exclusions == []
        assert len(results) == 20
        assert [r.scenario_id for r in results] == list(range(20))

    def test_every_machine_gets_tripped(self, batch):
        results, _ = batch
        trips = {
            r.scenario.disturbance.gen_bus
            for r in results
            if isinstance(r.scenario.disturbance, GeneratorTrip)
        }
        assert trips == set(range(30, 40))

    def test_alternation_and_step_sizing(self, batch, ieee39):
        results, _ = batch
        total = ieee39.total_load_p(1.0)
        for r in results:
            if r.scenario_id % 2 == 0:
                assert isinstance(r.scenario.disturbance, GeneratorTrip)
            else:
                d = r.scenario.disturbance
                assert isinstance(d, LoadStep)
                level = r.scenario.load_level
                assert 0.05 * total * level <= d.delta_p <= 0.20 * total * level

    def test_nadirs_physical(self, batch):
        results, _ = batch
        for r in results:
            f = r.frequency
            assert 55.0 < f.nadir_hz <= 60.0
            assert f.nadir_hz <= f.steady_state_hz <= 60.0 + 1e-9
            assert 0.0 <= f.nadir_time_s <= 60.0

    def test_levels_come_from_the_grid(self, batch):
        results, _ = batch
        grid = np.linspace(0.5, 1.0, 20)
        for r in results:
            assert np.min(np.abs(grid - r.scenario.load_level)) < 1e-12

    def test_deterministic_across_runs(self, ieee39):
        a, _ = generate_scenario_set(ieee39, 4, seed=3)
        b, _ = generate_scenario_set(ieee39, 4, seed=3)
        for ra, rb in zip(a, b):
            assert ra.frequency == rb.frequency
            assert ra.scenario == rb.scenario
            np.testing.assert_array_equal(ra.snapshot.gen_response_tf,
                                          rb.snapshot.gen_response_tf)

    def test_seed_changes_the_draw(self, ieee39):
        a, _ = generate_scenario_set(ieee39, 4, seed=3)
        b, _ = generate_scenario_set(ieee39, 4, seed=4)
        assert any(
            ra.scenario.load_level != rb.scenario.load_level
            or ra.scenario.disturbance != rb.scenario.disturbance
            for ra, rb in zip(a, b)
        )


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        results, exclusions = generate_scenario_set(droop_pair(), 4, seed=2)
        assert results, "droop pair scenarios should all survive"
        save_dataset(tmp_path / "ds", results, exclusions,
                     meta={"network": "droop-pair"})
        loaded, manifest = load_dataset(tmp_path / "ds")
        assert manifest["count"] == len(results)
        assert manifest["meta"]["network"] == "droop-pair"
        for orig, back in zip(results, loaded):
            assert back.scenario == orig.scenario
            assert back.frequency == orig.frequency
            for key, vec in orig.snapshot.as_dict().items():
                np.testing.assert_array_equal(
                    getattr(back.snapshot, key), vec, err_msg=key
                )

    def test_empty_dataset_refused(self, tmp_path):
        from freqcast.simulator import SimulatorError

        with pytest.raises(SimulatorError):
            save_dataset(tmp_path / "empty", [], [])


class TestValidation:
    def test_load_level_bounds(self):
        with pytest.raises(ValueError):
            Scenario(0.4, None)
        with pytest.raises(ValueError):
            Scenario(1.2, None)

    def test_zero_load_step_rejected(self):
        with pytest.raises(ValueError):
            LoadStep(3, 0.0)

    def test_unknown_trip_target(self):
        model = build_dynamic_model(droop_pair(), 1.0)
        with pytest.raises(ValueError):
            simulate(model, Scenario(1.0, GeneratorTrip(99)), horizon=1.0)

    def test_step_size_bounds(self):
        model = build_dynamic_model(droop_pair(), 1.0)
        with pytest.raises(ValueError):
            simulate(model, Scenario(1.0, None), dt=0.0)
        with pytest.raises(ValueError):
            simulate(model, Scenario(1.0, None), dt=0.1)

    def test_divergence_guard_fires(self):
        from freqcast.simulator import NumericalDivergence

        model = build_dynamic_model(coasting_trio(), 1.0)
        # without droop the coasting ramp passes 0.2 pu inside the horizon
        with pytest.raises(NumericalDivergence):
            simulate(model, Scenario(1.0, GeneratorTrip(3)), horizon=60.0)
