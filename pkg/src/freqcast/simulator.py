"""Multi-machine swing-equation simulator with droop governors.

The model is the classical reduced-network one: every synchronous machine
keeps rotor angle, per-unit speed deviation and mechanical power as state;
electrical powers deviate from the operating point through a linearized
coupling matrix of synchronizing-power coefficients; governors are
first-order droop loops clamped at the turbine ceiling. A generator trip
removes the machine and hands its pre-fault electrical power to the others
according to their synchronizing coefficients toward the faulted bus; a
load step is shared the same way. Fixed-step RK4 integration.

System-base quantities are used throughout the state equations: a machine's
inertia and gains are converted from the machine base once, when the model
is built.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from freqcast.network import (
    NoConvergence,
    PowerFlowSolution,
    PowerNetwork,
    build_matrices,
    distribute_unbalanced_power,
    kron_reduce,
    solve_power_flow,
    sync_coefficients,
)

log = logging.getLogger(__name__)


class SimulatorError(Exception):
    pass


class NumericalDivergence(SimulatorError):
    """Integration produced NaN or a speed excursion beyond 0.2 pu."""


@dataclass(frozen=True)
class GeneratorTrip:
    """Loss of the machine at ``gen_bus`` at t = 0."""

    gen_bus: int


@dataclass(frozen=True)
class LoadStep:
    """Instantaneous active-power load change at ``bus`` (per-unit, post
    load-level scaling; positive = added demand)."""

    bus: int
    delta_p: float

    def __post_init__(self):
        if self.delta_p == 0.0:
            raise ValueError("load step of zero makes no scenario")


@dataclass(frozen=True)
class Scenario:
    load_level: float
    disturbance: GeneratorTrip | LoadStep | None
    seed: int = 0
    nominal_frequency_hz: float = 60.0

    def __post_init__(self):
        if not 0.5 <= self.load_level <= 1.0:
            raise ValueError(f"load_level {self.load_level} outside [0.5, 1.0]")

    def describe(self) -> str:
        if isinstance(self.disturbance, GeneratorTrip):
            ev = f"trip gen@{self.disturbance.gen_bus}"
        elif isinstance(self.disturbance, LoadStep):
            ev = f"step {self.disturbance.delta_p:+.3f} pu @bus{self.disturbance.bus}"
        else:
            ev = "no disturbance"
        return f"level {self.load_level:.3f}, {ev}"


@dataclass(frozen=True)
class MachineState:
    delta: float
    omega_dev: float
    p_mech: float
    p_elec: float


@dataclass(frozen=True)
class DynamicModel:
    """Equilibrium initial condition plus system-base machine parameters
    and the linearized coupling matrix about the operating point."""

    network: PowerNetwork
    solution: PowerFlowSolution
    load_level: float
    gen_bus_ids: np.ndarray
    inertia: np.ndarray       # H_i, seconds on the system base
    damping: np.ndarray       # D_i, system base
    droop: np.ndarray         # governor gain K_i, system base
    governor_tc: np.ndarray   # seconds
    p_max: np.ndarray         # per-unit, system base
    p_elec0: np.ndarray
    p_mech0: np.ndarray
    delta0: np.ndarray        # bus voltage angles at the machines, radians
    coupling: np.ndarray      # P_sik between machines, zero diagonal


@dataclass(frozen=True)
class SimulationTrace:
    scenario: Scenario
    times: np.ndarray
    delta: np.ndarray      # (steps, n_gen); zeros for out-of-service slots
    omega_dev: np.ndarray
    p_mech: np.ndarray
    p_elec: np.ndarray
    coi_omega_pu: np.ndarray
    coi_hz: np.ndarray
    in_service: np.ndarray
    shares: np.ndarray     # imbalance share per machine (0 for tripped)
    tf_network: PowerNetwork
    dt: float

    def state_at(self, step: int, gen_pos: int) -> MachineState:
        return MachineState(
            delta=float(self.delta[step, gen_pos]),
            omega_dev=float(self.omega_dev[step, gen_pos]),
            p_mech=float(self.p_mech[step, gen_pos]),
            p_elec=float(self.p_elec[step, gen_pos]),
        )


@dataclass(frozen=True)
class FrequencyFeatures:
    nadir_hz: float
    nadir_time_s: float
    steady_state_hz: float


@dataclass(frozen=True)
class SnapshotFeatures:
    """The operating-point feature vectors at t0 (pre-event) and tf (one
    step after the event). Generator vectors follow ``gen_bus_ids`` order,
    bus vectors follow ``bus_ids``."""

    gen_bus_ids: np.ndarray
    bus_ids: np.ndarray
    gen_p_elec_t0: np.ndarray
    gen_p_mech_t0: np.ndarray
    gen_reserve_t0: np.ndarray
    gen_p_elec_tf: np.ndarray
    gen_p_mech_tf: np.ndarray
    gen_reserve_tf: np.ndarray
    gen_shortage_tf: np.ndarray
    gen_response_tf: np.ndarray
    bus_voltage_t0: np.ndarray
    bus_angle_t0: np.ndarray
    load_p_t0: np.ndarray
    bus_voltage_tf: np.ndarray
    bus_angle_tf: np.ndarray
    load_p_tf: np.ndarray

    GEN_KEYS = (
        "gen_p_elec_t0", "gen_p_mech_t0", "gen_reserve_t0",
        "gen_p_elec_tf", "gen_p_mech_tf", "gen_reserve_tf",
        "gen_shortage_tf", "gen_response_tf",
    )
    BUS_KEYS = (
        "bus_voltage_t0", "bus_angle_t0", "load_p_t0",
        "bus_voltage_tf", "bus_angle_tf", "load_p_tf",
    )

    def as_dict(self):
        return {k: getattr(self, k) for k in self.GEN_KEYS + self.BUS_KEYS}


@dataclass(frozen=True)
class ScenarioResult:
    scenario_id: int
    scenario: Scenario
    snapshot: SnapshotFeatures
    frequency: FrequencyFeatures


def build_dynamic_model(network: PowerNetwork, load_level: float) -> DynamicModel:
    """Solve the operating point and linearize about it.

    Machine-base inertia/damping/droop are rescaled to the system base with
    the machine MVA taken as ``p_max * base_mva``; P_m = P_e at every
    machine, so all state derivatives start at zero.
    """
    sol = solve_power_flow(network, load_level)
    Y, _ = build_matrices(network, sol)
    gens = network.generators
    gen_idx = network.gen_bus_indices
    coupling = _machine_coupling(network, sol, Y)
    p_max = np.array([g.p_max for g in gens])
    return DynamicModel(
        network=network,
        solution=sol,
        load_level=load_level,
        gen_bus_ids=np.array([g.bus_id for g in gens]),
        inertia=np.array([g.inertia_h for g in gens]) * p_max,
        damping=np.array([g.damping_d for g in gens]) * p_max,
        droop=np.array([g.droop_gain for g in gens]) * p_max,
        governor_tc=np.array([g.governor_tc for g in gens]),
        p_max=p_max,
        p_elec0=sol.gen_p.copy(),
        p_mech0=sol.gen_p.copy(),
        delta0=sol.va[gen_idx].copy(),
        coupling=coupling,
    )


def _machine_coupling(net: PowerNetwork, sol: PowerFlowSolution,
                      Y: np.ndarray) -> np.ndarray:
    """Pairwise synchronizing-power coefficients between the machines from
    the Kron reduction of the grounded Y to the generator buses."""
    gen_idx = net.gen_bus_indices
    Yred = kron_reduce(Y, gen_idx)
    m = gen_idx.size
    vm = sol.vm[gen_idx]
    va = sol.va[gen_idx]
    P = np.zeros((m, m))
    for i in range(m):
        for k in range(m):
            if i == k:
                continue
            d = va[i] - va[k]
            P[i, k] = vm[i] * vm[k] * (
                Yred[i, k].imag * np.cos(d) - Yred[i, k].real * np.sin(d)
            )
    return P


def _apply_disturbance(model: DynamicModel, scenario: Scenario):
    """Event bookkeeping at t = 0.

    Returns (in_service mask, adjusted P_e0, shares over all machine slots,
    coupling matrix for the surviving set, tf_network ready for the
    post-event power-flow re-solve).
    """
    net = model.network
    m = model.gen_bus_ids.size
    in_service = np.ones(m, dtype=bool)
    shares_full = np.zeros(m)
    dist = scenario.disturbance

    if dist is None:
        return in_service, model.p_elec0.copy(), shares_full, model.coupling, net

    if isinstance(dist, GeneratorTrip):
        pos_list = np.flatnonzero(model.gen_bus_ids == dist.gen_bus)
        if pos_list.size == 0:
            raise ValueError(f"no generator at bus {dist.gen_bus}")
        pos = int(pos_list[0])
        in_service[pos] = False
        deficit = float(model.p_elec0[pos])
        post_net = net.without_generator(pos)
        Y_post, _ = build_matrices(post_net, replace(model.solution,
                                                     network=post_net))
        co = sync_coefficients(
            replace(model.solution, network=post_net), Y_post, dist.gen_bus
        )
        alive_shares = distribute_unbalanced_power(co, deficit)
        shares_full[in_service] = alive_shares
        pe0 = model.p_elec0.copy()
        pe0[in_service] += alive_shares
        pe0[pos] = 0.0
        coupling = _machine_coupling(
            post_net, replace(model.solution, network=post_net), Y_post
        )
        tf_net = _redispatched(post_net, model, pe0, in_service, scenario)
        return in_service, pe0, shares_full, coupling, tf_net

    if isinstance(dist, LoadStep):
        Y, _ = build_matrices(net, model.solution)
        co = sync_coefficients(model.solution, Y, dist.bus)
        shares_full = distribute_unbalanced_power(co, dist.delta_p)
        pe0 = model.p_elec0 + shares_full
        stepped = net.with_load_step(dist.bus, dist.delta_p / scenario.load_level)
        tf_net = _redispatched(stepped, model, pe0, in_service, scenario)
        return in_service, pe0, shares_full, model.coupling, tf_net

    raise TypeError(f"unknown disturbance {dist!r}")


def _redispatched(net: PowerNetwork, model: DynamicModel, pe0: np.ndarray,
                  in_service: np.ndarray, scenario: Scenario) -> PowerNetwork:
    """Write the event-instant electrical powers back as the scheduled
    dispatch of the post-event network, clamped to each turbine ceiling
    (the slack absorbs the clamped remainder in the tf re-solve)."""
    sched = {}
    for pos, bus in enumerate(model.gen_bus_ids):
        if in_service[pos]:
            target = min(pe0[pos] / scenario.load_level, model.p_max[pos])
            sched[int(bus)] = max(target, 0.0)
    gens = tuple(
        replace(g, p_mech=sched[g.bus_id])
        for g in net.generators
    )
    return replace(net, generators=gens)


def simulate(model: DynamicModel, scenario: Scenario, dt: float = 0.01,
             horizon: float = 60.0) -> SimulationTrace:
    """RK4 integration of the swing/governor equations over the horizon.

    Per in-service machine i:
        d delta_i/dt  = w0 * dw_i
        2 H_i d dw_i/dt = P_mi - P_ei - D_i dw_i
        T_gi dP_mi/dt = -K_i dw_i - (P_mi - P_mi0),  P_mi <= P_max i
    with P_ei = P_ei0 + sum_k P_sik ((delta_i - delta_i0) - (delta_k -
    delta_k0)). The COI speed is the inertia-weighted mean over the
    in-service set.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt {dt} outside (0, 0.05]")
    in_service, pe0_adj, shares, coupling, tf_net = _apply_disturbance(
        model, scenario
    )
    alive = np.flatnonzero(in_service)
    H = model.inertia[alive]
    D = model.damping[alive]
    K = model.droop[alive]
    Tg = model.governor_tc[alive]
    pmax = model.p_max[alive]
    pe0 = pe0_adj[alive]
    pm0 = model.p_mech0[alive]
    d0 = model.delta0[alive]
    Ps = coupling
    S = Ps.sum(axis=1)
    w0 = 2.0 * np.pi * scenario.nominal_frequency_hz
    two_h = 2.0 * H

    steps = int(round(horizon / dt)) + 1
    m_all = model.gen_bus_ids.size
    times = np.arange(steps) * dt
    delta = np.zeros((steps, m_all))
    omega = np.zeros((steps, m_all))
    p_mech = np.zeros((steps, m_all))
    p_elec = np.zeros((steps, m_all))

    y = np.vstack([d0, np.zeros_like(d0), pm0])

    def p_e(ddelta):
        return pe0 + S * ddelta - Ps @ ddelta

    def deriv(y):
        dd = y[0] - d0
        pe = p_e(dd)
        out = np.empty_like(y)
        out[0] = w0 * y[1]
        out[1] = (y[2] - pe - D * y[1]) / two_h
        dpm = (-K * y[1] - (y[2] - pm0)) / Tg
        out[2] = np.where((y[2] >= pmax) & (dpm > 0.0), 0.0, dpm)
        return out

    def record(step, y):
        delta[step, alive] = y[0]
        omega[step, alive] = y[1]
        p_mech[step, alive] = y[2]
        p_elec[step, alive] = p_e(y[0] - d0)

    record(0, y)
    for step in range(1, steps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * dt * k1)
        k3 = deriv(y + 0.5 * dt * k2)
        k4 = deriv(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[2] = np.minimum(y[2], pmax)
        if not np.all(np.isfinite(y)) or np.abs(y[1]).max() > 0.2:
            raise NumericalDivergence(
                f"diverged at t={step * dt:.2f}s ({scenario.describe()}): "
                f"max |dw| = {np.abs(y[1]).max():.3g} pu"
            )
        record(step, y)

    h_alive = H
    coi = (omega[:, alive] * h_alive).sum(axis=1) / h_alive.sum()
    coi_hz = scenario.nominal_frequency_hz * (1.0 + coi)
    return SimulationTrace(
        scenario=scenario,
        times=times,
        delta=delta,
        omega_dev=omega,
        p_mech=p_mech,
        p_elec=p_elec,
        coi_omega_pu=coi,
        coi_hz=coi_hz,
        in_service=in_service,
        shares=shares,
        tf_network=tf_net,
        dt=dt,
    )


def extract_frequency_features(trace: SimulationTrace) -> FrequencyFeatures:
    """Nadir (series minimum), its time, and the mean of the last 5 s."""
    if trace.coi_hz.size == 0:
        raise SimulatorError("empty trace")
    k = int(np.argmin(trace.coi_hz))
    tail = trace.times >= trace.times[-1] - 5.0
    return FrequencyFeatures(
        nadir_hz=float(trace.coi_hz[k]),
        nadir_time_s=float(trace.times[k]),
        steady_state_hz=float(trace.coi_hz[tail].mean()),
    )


def machine_response(p_mech: np.ndarray, p_elec: np.ndarray,
                     inertia: np.ndarray,
                     in_service: np.ndarray | None = None) -> np.ndarray:
    """Per-machine acceleration relative to the center of inertia:

        f_i = (P_mi - P_ei) / (2 H_i) - sum(P_m - P_e) / (2 sum H)

    over the in-service machines (out-of-service slots stay zero). The
    inertia-weighted sum ``sum 2 H_i f_i`` is identically zero, and
    identical machines under an equal imbalance all score zero.
    """
    p_mech = np.asarray(p_mech, dtype=float)
    p_elec = np.asarray(p_elec, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    if in_service is None:
        in_service = np.ones(p_mech.shape, dtype=bool)
    out = np.zeros(p_mech.shape)
    h_sys = inertia[in_service].sum()
    imbalance = (p_mech[in_service] - p_elec[in_service]).sum()
    out[in_service] = (
        (p_mech[in_service] - p_elec[in_service]) / (2.0 * inertia[in_service])
        - imbalance / (2.0 * h_sys)
    )
    return out


def snapshot_features(model: DynamicModel, trace: SimulationTrace,
                      scenario: Scenario) -> SnapshotFeatures:
    """The 14 operating-point vectors at t0 and tf (one step post-event).

    tf voltages/angles come from a re-solved power flow on the post-event
    network; generator powers at tf come from the integrated trace; the
    per-generator response is :func:`machine_response` at tf, and reserves
    are clamped at zero.
    """
    net = model.network
    sol0 = model.solution
    alive = trace.in_service

    pe_tf = trace.p_elec[1].copy()
    pm_tf = trace.p_mech[1].copy()
    reserve_t0 = np.clip(model.p_max - model.p_elec0, 0.0, None)
    reserve_tf = np.where(alive, np.clip(model.p_max - pe_tf, 0.0, None), 0.0)

    resp = machine_response(pm_tf, pe_tf, model.inertia, alive)

    try:
        sol_tf = solve_power_flow(trace.tf_network, scenario.load_level,
                                  warm_start=sol0)
    except NoConvergence:
        log.warning("tf power flow failed (%s); using pre-event voltages",
                    scenario.describe())
        sol_tf = sol0

    loads_t0 = np.array([b.load_p for b in net.buses]) * scenario.load_level
    loads_tf = loads_t0.copy()
    if isinstance(scenario.disturbance, LoadStep):
        loads_tf[net.index(scenario.disturbance.bus)] += scenario.disturbance.delta_p

    return SnapshotFeatures(
        gen_bus_ids=model.gen_bus_ids.copy(),
        bus_ids=np.array([b.bus_id for b in net.buses]),
        gen_p_elec_t0=model.p_elec0.copy(),
        gen_p_mech_t0=model.p_mech0.copy(),
        gen_reserve_t0=reserve_t0,
        gen_p_elec_tf=np.where(alive, pe_tf, 0.0),
        gen_p_mech_tf=np.where(alive, pm_tf, 0.0),
        gen_reserve_tf=reserve_tf,
        gen_shortage_tf=trace.shares.copy(),
        gen_response_tf=resp,
        bus_voltage_t0=sol0.vm.copy(),
        bus_angle_t0=sol0.va.copy(),
        load_p_t0=loads_t0,
        bus_voltage_tf=sol_tf.vm.copy(),
        bus_angle_tf=sol_tf.va.copy(),
        load_p_tf=loads_tf,
    )


LOAD_LEVELS = np.linspace(0.5, 1.0, 20)


def generate_scenario_set(network: PowerNetwork, count: int, seed: int,
                          dt: float = 0.01, horizon: float = 60.0):
    """Simulate ``count`` disturbance scenarios.

    Load levels come from the 20-level grid between 50% and 100%;
    disturbances alternate generator trips (cycling through every machine)
    and load steps of 5-20% of the scaled system load at a random non-
    generator load bus. Returns (results, exclusions); diverged or
    non-convergent runs are excluded and reported there.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    gen_buses = [g.bus_id for g in network.generators]
    load_buses = [
        b.bus_id for b in network.buses
        if b.load_p > 0.0 and b.bus_id not in gen_buses
    ]
    total_load = network.total_load_p(1.0)

    models: dict[float, DynamicModel] = {}
    results: list[ScenarioResult] = []
    exclusions: list[dict] = []
    trip_cursor = 0
    for idx in range(count):
        level = float(LOAD_LEVELS[rng.integers(0, LOAD_LEVELS.size)])
        if idx % 2 == 0:
            target = gen_buses[trip_cursor % len(gen_buses)]
            trip_cursor += 1
            disturbance = GeneratorTrip(target)
            _ = rng.uniform(0.05, 0.20)  # keep the stream aligned across kinds
            _ = rng.integers(0, len(load_buses))
        else:
            frac = float(rng.uniform(0.05, 0.20))
            bus = load_buses[int(rng.integers(0, len(load_buses)))]
            disturbance = LoadStep(bus, frac * total_load * level)
        scenario = Scenario(load_level=level, disturbance=disturbance,
                            seed=seed + idx)
        try:
            model = models.get(level)
            if model is None:
                model = build_dynamic_model(network, level)
                models[level] = model
            trace = simulate(model, scenario, dt=dt, horizon=horizon)
            freq = extract_frequency_features(trace)
            snap = snapshot_features(model, trace, scenario)
        except (NumericalDivergence, NoConvergence) as exc:
            log.warning("excluding scenario %d (%s): %s", idx,
                        scenario.describe(), exc)
            exclusions.append({"scenario_id": idx,
                               "scenario": scenario.describe(),
                               "reason": str(exc)})
            continue
        results.append(ScenarioResult(idx, scenario, snap, freq))
    return results, exclusions


def _scenario_row(res: ScenarioResult) -> dict:
    sc = res.scenario
    if isinstance(sc.disturbance, GeneratorTrip):
        kind, target, dp = "generator_trip", sc.disturbance.gen_bus, 0.0
    elif isinstance(sc.disturbance, LoadStep):
        kind, target, dp = "load_step", sc.disturbance.bus, sc.disturbance.delta_p
    else:
        kind, target, dp = "none", 0, 0.0
    return {
        "scenario_id": res.scenario_id,
        "load_level": sc.load_level,
        "kind": kind,
        "target": target,
        "delta_p": dp,
        "seed": sc.seed,
        "nominal_hz": sc.nominal_frequency_hz,
    }


def save_dataset(path, results: list[ScenarioResult],
                 exclusions: list[dict], meta: dict | None = None) -> None:
    """Write ``manifest.json`` + ``samples.csv`` into a directory.

    The CSV holds one row per retained scenario: identification, targets,
    then every feature vector flattened as ``key@bus`` columns. Floats are
    written with repr() so a reload is bit-exact.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "freqcast-dataset",
        "version": 1,
        "count": len(results),
        "exclusions": exclusions,
        "scenarios": [_scenario_row(r) for r in results],
    }
    if meta:
        manifest["meta"] = meta
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if not results:
        raise SimulatorError("refusing to write an empty dataset")
    snap0 = results[0].snapshot
    gen_cols = [f"{k}@{b}" for k in SnapshotFeatures.GEN_KEYS
                for b in snap0.gen_bus_ids]
    bus_cols = [f"{k}@{b}" for k in SnapshotFeatures.BUS_KEYS
                for b in snap0.bus_ids]
    header = (["scenario_id", "load_level", "kind", "target", "delta_p",
               "seed", "nominal_hz", "nadir_hz", "nadir_time_s",
               "steady_state_hz"] + gen_cols + bus_cols)
    with open(out / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for res in results:
            row = _scenario_row(res)
            cells = [row["scenario_id"], repr(float(row["load_level"])),
                     row["kind"], row["target"], repr(float(row["delta_p"])),
                     row["seed"], repr(float(row["nominal_hz"])),
                     repr(res.frequency.nadir_hz),
                     repr(res.frequency.nadir_time_s),
                     repr(res.frequency.steady_state_hz)]
            for key in SnapshotFeatures.GEN_KEYS:
                cells.extend(repr(float(v)) for v in getattr(res.snapshot, key))
            for key in SnapshotFeatures.BUS_KEYS:
                cells.extend(repr(float(v)) for v in getattr(res.snapshot, key))
            writer.writerow(cells)


def load_dataset(path):
    """Inverse of :func:`save_dataset`: returns (results, manifest)."""
    out = Path(path)
    with open(out / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    results = []
    with open(out / "samples.csv", "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        gen_buses = []
        bus_ids = []
        for col in header:
            if col.startswith("gen_p_elec_t0@"):
                gen_buses.append(int(col.split("@")[1]))
            elif col.startswith("bus_voltage_t0@"):
                bus_ids.append(int(col.split("@")[1]))
        col_at = {name: i for i, name in enumerate(header)}
        for cells in reader:
            kind = cells[col_at["kind"]]
            target = int(cells[col_at["target"]])
            dp = float(cells[col_at["delta_p"]])
            if kind == "generator_trip":
                dist = GeneratorTrip(target)
            elif kind == "load_step":
                dist = LoadStep(target, dp)
            else:
                dist = None
            scenario = Scenario(
                load_level=float(cells[col_at["load_level"]]),
                disturbance=dist,
                seed=int(cells[col_at["seed"]]),
                nominal_frequency_hz=float(cells[col_at["nominal_hz"]]),
            )
            vals = {}
            cursor = col_at["steady_state_hz"] + 1
            for key in SnapshotFeatures.GEN_KEYS:
                vals[key] = np.array(
                    [float(c) for c in cells[cursor:cursor + len(gen_buses)]]
                )
                cursor += len(gen_buses)
            for key in SnapshotFeatures.BUS_KEYS:
                vals[key] = np.array(
                    [float(c) for c in cells[cursor:cursor + len(bus_ids)]]
                )
                cursor += len(bus_ids)
            snap = SnapshotFeatures(
                gen_bus_ids=np.array(gen_buses),
                bus_ids=np.array(bus_ids),
                **vals,
            )
            freq = FrequencyFeatures(
                nadir_hz=float(cells[col_at["nadir_hz"]]),
                nadir_time_s=float(cells[col_at["nadir_time_s"]]),
                steady_state_hz=float(cells[col_at["steady_state_hz"]]),
            )
            results.append(ScenarioResult(int(cells[col_at["scenario_id"]]),
                                          scenario, snap, freq))
    return results, manifest
