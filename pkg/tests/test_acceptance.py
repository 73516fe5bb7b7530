"""Acceptance gate: one test and one printed verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
as they happen; without ``-s`` they appear in the captured output of any
failing test. The full-scale demo (criteria 6 and 7) trains on 300 simulated
39-bus scenarios and is the slow part, budgeted at thirty minutes and
normally finishing far under it.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from freqcast.embedding import TsneConfig, input_affinities, run_tsne
from freqcast.harness import PipelineConfig, end_to_end, run_learning_curve
from freqcast.network import (
    build_matrices,
    electrical_distance,
    solve_power_flow,
)
from freqcast.nn import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    Network,
    TrainConfig,
    gradient_check,
    mse_loss,
    train,
)
from freqcast.simulator import (
    GeneratorTrip,
    LoadStep,
    Scenario,
    build_dynamic_model,
    extract_frequency_features,
    generate_scenario_set,
    simulate,
)
from conftest import random_radial_network
from test_embedding import cluster_separated, two_clusters_5d
from test_simulator import coasting_trio, droop_pair


class gate:
    """Context manager printing exactly one [PASS]/[FAIL] line per block."""

    def __init__(self, number: int, label: str):
        self.number = number
        self.label = label
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        wall = time.perf_counter() - self.start
        if exc_type is None:
            extra = f" ({self.detail}, {wall:.1f} s)" if self.detail else \
                f" ({wall:.1f} s)"
            print(f"\n[PASS] {self.number}/9 {self.label}{extra}")
        else:
            print(f"\n[FAIL] {self.number}/9 {self.label}: {exc}")
        return False


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """Full-scale run: 300 scenarios on the 39-bus system, 32x32 grids with
    the 6 best features, 220/80 split, all three models."""
    ws = tmp_path_factory.mktemp("demo")
    config = PipelineConfig(
        network="ieee39",
        workspace=str(ws),
        scenario_count=300,
        seed=0,
        grid_h=32,
        top_k=6,
        train_count=220,
        models=("cnn", "mlp", "mean"),
        training=TrainConfig(learning_rate=1e-3, epochs=150, batch_size=16),
    )
    start = time.perf_counter()
    reports = end_to_end(config)
    wall = time.perf_counter() - start
    return SimpleNamespace(config=config, ws=ws, reports=reports, wall=wall)


def test_1_layer_gradients_match_finite_differences():
    with gate(1, "layer gradients match finite differences") as g:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            net = Network(
                [
                    Conv2D(3, 2, 3, activation="tanh"),
                    MaxPool2D(2),
                    Flatten(),
                    Dense(12, 4, activation="relu"),
                    Dense(4, 1),
                ],
                seed=seed,
            )
            x = rng.normal(size=(6, 6, 2))
            worst = max(worst,
                        gradient_check(net, x, target=float(rng.normal())))
            # the loss gradient itself, against central differences
            pred = rng.normal(size=4)
            t = rng.normal(size=4)
            _, grad = mse_loss(pred, t)
            eps = 1e-6
            for i in range(4):
                up = pred.copy()
                dn = pred.copy()
                up[i] += eps
                dn[i] -= eps
                numeric = (mse_loss(up, t)[0] - mse_loss(dn, t)[0]) / (2 * eps)
                worst = max(worst, abs(grad[i] - numeric) / max(abs(grad[i]),
                                                                1e-10))
        g.detail = f"worst relative error {worst:.2e}"
        assert worst < 1e-4, f"worst relative error {worst:.2e} >= 1e-4"
        assert time.perf_counter() - g.start < 10.0, "over the 10 s budget"


def test_2_embedding_separates_synthetic_clusters():
    with gate(2, "embedding separates synthetic clusters") as g:
        target = 2.0
        separated = 0
        for seed in range(5):
            pts, labels = two_clusters_5d(np.random.default_rng(100 + seed))
            aff = input_affinities(pts, target)
            for row in aff.conditional:
                p = row[row > 0]
                perp = 2.0 ** (-(p * np.log(p)).sum() / np.log(2.0))
                assert abs(perp - target) <= 1e-4, (
                    f"achieved perplexity {perp} misses {target}")
            emb = run_tsne(pts, TsneConfig(perplexity=target, iterations=500,
                                           learning_rate=10.0, seed=seed))
            assert emb.kl_final < emb.kl_initial, (
                f"KL rose on seed {seed}: {emb.kl_initial} -> {emb.kl_final}")
            separated += cluster_separated(emb.coords, labels)
        g.detail = f"{separated}/5 seeds separated"
        assert separated == 5, f"only {separated}/5 seeds separated"
        assert time.perf_counter() - g.start < 30.0, "over the 30 s budget"


def test_3_electrical_distance_identities(ieee39):
    with gate(3, "electrical distance identities") as g:
        from conftest import two_bus_resistive

        _, Z = build_matrices(two_bus_resistive())
        D = electrical_distance(Z)
        assert abs(D[0, 1] - 2.0 / 21.0) < 1e-12, "hand value off"

        rng = np.random.default_rng(202)
        for _ in range(100):
            _, Zr = build_matrices(random_radial_network(rng))
            Dr = electrical_distance(Zr)
            assert np.allclose(Dr, Dr.T, atol=1e-12), "asymmetric"
            assert np.all(np.diag(Dr) == 0.0), "nonzero diagonal"

        sol = solve_power_flow(ieee39, 1.0)
        Y, Z39 = build_matrices(ieee39, sol)
        residual = np.max(np.abs(Y @ Z39 - np.eye(ieee39.n_buses)))
        g.detail = f"39-bus inverse residual {residual:.1e}"
        assert residual < 1e-8, f"inverse residual {residual:.1e}"
        assert time.perf_counter() - g.start < 5.0, "over the 5 s budget"


def test_4_swing_dynamics_physics_oracles(ieee39):
    with gate(4, "swing dynamics physics oracles") as g:
        # (a) an undisturbed system holds nominal frequency
        model39 = build_dynamic_model(ieee39, 1.0)
        quiet = simulate(model39, Scenario(1.0, None), horizon=60.0)
        drift = np.max(np.abs(quiet.coi_hz - 60.0))
        assert drift <= 1e-9, f"equilibrium drift {drift:.1e} Hz"

        # (b) coasting slope: trip 0.1 pu with 5 s of inertia left
        coast = build_dynamic_model(coasting_trio(), 1.0)
        trace = simulate(coast, Scenario(1.0, GeneratorTrip(3)), horizon=1.0)
        slope = ((trace.coi_omega_pu[5] - trace.coi_omega_pu[0])
                 / (trace.times[5] - trace.times[0]))
        expected = -0.1 / (2.0 * 5.0)
        assert abs(slope - expected) <= 0.02 * abs(expected), (
            f"initial slope {slope:.5f} vs {expected:.5f} pu/s")

        # (c) droop settles at -dP/(K + D) = -0.1/21
        pair = build_dynamic_model(droop_pair(), 1.0)
        stepped = simulate(pair, Scenario(1.0, LoadStep(3, 0.1)),
                           horizon=60.0)
        settle = np.mean(stepped.omega_dev[-100:], axis=0).mean()
        assert abs(settle - (-0.1 / 21.0)) < 1e-3, (
            f"steady deviation {settle:.6f} vs {-0.1 / 21.0:.6f} pu")

        # (d) nadirs are step-size converged
        moved = 0.0
        for net, dist in [
            (droop_pair(), LoadStep(3, 0.1)),
            (droop_pair(), GeneratorTrip(2)),
            (ieee39, GeneratorTrip(35)),
        ]:
            model = build_dynamic_model(net, 1.0)
            nadirs = []
            for dt in (0.01, 0.005):
                tr = simulate(model, Scenario(1.0, dist), horizon=30.0,
                              dt=dt)
                nadirs.append(extract_frequency_features(tr).nadir_hz)
            moved = max(moved, abs(nadirs[0] - nadirs[1]))
        g.detail = f"drift {drift:.1e} Hz, nadir dt-shift {moved:.1e} Hz"
        assert moved < 1e-4, f"nadir moved {moved:.2e} Hz when dt halved"
        assert time.perf_counter() - g.start < 60.0, "over the 60 s budget"


def test_5_inertia_weighted_response_identity(ieee39):
    with gate(5, "inertia-weighted response identity") as g:
        results, excluded = generate_scenario_set(ieee39, 20, seed=17)
        assert not excluded, f"{len(excluded)} scenarios excluded"
        inertia = build_dynamic_model(ieee39, 1.0).inertia
        worst = 0.0
        for res in results:
            resp = res.snapshot.gen_response_tf
            assert np.max(np.abs(resp)) > 0.0, "vacuous response vector"
            worst = max(worst, abs(np.sum(2.0 * inertia * resp)))
        g.detail = f"20 snapshots, worst |sum| {worst:.1e}"
        assert worst <= 1e-9, f"identity violated by {worst:.2e}"


def test_6_full_scale_nadir_regression_demo(demo):
    with gate(6, "full-scale nadir regression demo") as g:
        cnn = demo.reports["cnn"]
        mlp = demo.reports["mlp"]
        mean = demo.reports["mean"]
        for rep in (cnn, mlp, mean):
            assert rep.n_test == 80, f"test split is {rep.n_test}, not 80"
        g.detail = (f"MAE cnn {cnn.mae_hz:.4f} / mlp {mlp.mae_hz:.4f} / "
                    f"mean {mean.mae_hz:.4f} Hz, {demo.wall:.0f} s wall")
        assert cnn.mae_hz < 0.5 * mean.mae_hz, (
            f"CNN {cnn.mae_hz:.4f} not under half of baseline "
            f"{mean.mae_hz:.4f}")
        assert cnn.mae_hz <= 1.25 * mlp.mae_hz, (
            f"CNN {cnn.mae_hz:.4f} above 1.25x MLP {mlp.mae_hz:.4f}")
        assert demo.wall < 1800.0, f"demo took {demo.wall:.0f} s"


def test_7_learning_curve_improves_with_data(demo):
    with gate(7, "learning curve improves with data") as g:
        rows = run_learning_curve(demo.config, sizes=(50, 100, 200, 220),
                                  models=("cnn",))
        maes = [row["mae_hz"] for row in rows]
        inversions = sum(b > a for a, b in zip(maes, maes[1:]))
        g.detail = ("MAE by size " +
                    " ".join(f"{m:.4f}" for m in maes) +
                    f", {inversions} inversion(s)")
        assert maes[-1] < maes[0], (
            f"MAE at 220 ({maes[-1]:.4f}) not below MAE at 50 "
            f"({maes[0]:.4f})")
        assert inversions <= 1, f"{inversions} inversions"


def test_8_pipeline_determinism(tmp_path):
    with gate(8, "pipeline determinism") as g:
        def run(ws):
            config = PipelineConfig(
                network="ieee39", workspace=str(ws), scenario_count=12,
                seed=3, horizon=20.0, grid_h=16, top_k=3, train_count=8,
                models=("cnn", "mean"),
                tsne=TsneConfig(iterations=300),
                training=TrainConfig(epochs=10, batch_size=4),
            )
            end_to_end(config)

        run(tmp_path / "first")
        run(tmp_path / "second")
        checked = [
            "reports/report.csv", "reports/predictions.csv",
            "models/cnn.ckpt", "models/mean.json",
        ]
        for rel in checked:
            a = (tmp_path / "first" / rel).read_bytes()
            b = (tmp_path / "second" / rel).read_bytes()
            assert a == b, f"{rel} differs between identical runs"
        g.detail = f"{len(checked)} artifacts byte-identical"


def test_9_small_network_memorization():
    with gate(9, "small network memorization") as g:
        rng = np.random.default_rng(12)
        X = rng.normal(size=(20, 8, 8, 2))
        y = rng.uniform(0.0, 1.0, size=20)
        net = Network(
            [
                Conv2D(3, 2, 8, activation="relu"),
                MaxPool2D(2),
                Flatten(),
                Dense(72, 32, activation="tanh"),
                Dense(32, 1),
            ],
            seed=0,
        )
        train(net, X, y, TrainConfig(learning_rate=3e-3, epochs=2000,
                                     batch_size=20, seed=0))
        mse = float(np.mean((net.forward(X)[:, 0] - y) ** 2))
        g.detail = f"training MSE {mse:.2e} after 2000 epochs"
        assert mse < 1e-4, f"training MSE {mse:.2e}"
