"""Static network model: admittance matrices, AC power flow, electrical
distances, and synchronizing-power coefficients.

Conventions
-----------
* Electrical quantities are per-unit on the system MVA base declared by the
  network; angles are radians.
* Bus ids are the external 1-based labels from the data file and must be
  contiguous; arrays returned by this module are indexed ``0..n-1`` in id
  order, so ``row = bus_id - 1``.
* Generator inertia, damping and droop are per-unit on the machine base
  ``p_max * base_mva``; the transient reactance ``xd_prime`` is per-unit on
  the system base so it can enter the admittance matrix directly.
* Loads are grounded as constant admittances ``(P - jQ) / |V|^2`` when the
  impedance matrix is built, which also guarantees a path to ground and an
  invertible Y.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np


class NetworkError(Exception):
    """Base class for errors raised by this module."""


class InvalidNetwork(NetworkError):
    """The network description violates a structural invariant."""


class SingularMatrix(NetworkError):
    """The admittance matrix has no usable inverse (no path to ground,
    disconnected island, or a numerically singular system)."""


class NoConvergence(NetworkError):
    """Newton-Raphson power flow failed to converge."""


class InfeasibleDispatch(NetworkError):
    """Total generation capacity cannot cover the scaled load."""


class UnknownNode(NetworkError):
    """A bus id that does not exist in the network was referenced."""


class DegenerateCoefficients(UserWarning):
    """Synchronizing coefficients sum to a non-positive value; shares fall
    back to inertia weighting."""


@dataclass(frozen=True)
class Bus:
    """A network node. ``kind`` is one of ``slack``, ``pv``, ``pq``."""

    bus_id: int
    kind: str
    load_p: float = 0.0
    load_q: float = 0.0
    voltage_setpoint: float = 1.0

    def __post_init__(self):
        if self.kind not in ("slack", "pv", "pq"):
            raise InvalidNetwork(f"bus {self.bus_id}: unknown kind {self.kind!r}")
        if self.load_p < 0:
            raise InvalidNetwork(f"bus {self.bus_id}: negative load_p")


@dataclass(frozen=True)
class Branch:
    """A transmission line or transformer between two buses.

    ``resistance``/``reactance`` are the series impedance, ``charging`` is
    the total line-charging susceptance (split half per end), ``tap`` is the
    off-nominal turns ratio on the *from* side (0 or 1 means none).
    """

    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    charging: float = 0.0
    tap: float = 0.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise InvalidNetwork(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if self.resistance == 0.0 and self.reactance == 0.0:
            raise InvalidNetwork(
                f"branch {self.from_bus}-{self.to_bus}: zero series impedance"
            )

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class Generator:
    """A synchronous machine.

    ``p_mech`` is the scheduled mechanical power at 100 % load level and
    ``p_max`` the turbine ceiling, both per-unit on the system base.
    ``inertia_h`` (s), ``damping_d`` and ``droop_gain`` are per-unit on the
    machine base ``p_max * base_mva``; ``governor_tc`` is in seconds.
    """

    bus_id: int
    p_mech: float
    p_max: float
    inertia_h: float
    damping_d: float
    droop_gain: float
    governor_tc: float
    xd_prime: float

    def __post_init__(self):
        if self.p_max <= 0:
            raise InvalidNetwork(f"generator at bus {self.bus_id}: p_max <= 0")
        if not 0.0 <= self.p_mech <= self.p_max:
            raise InvalidNetwork(
                f"generator at bus {self.bus_id}: p_mech outside [0, p_max]"
            )
        if self.inertia_h <= 0:
            raise InvalidNetwork(f"generator at bus {self.bus_id}: inertia_h <= 0")
        if self.droop_gain < 0 or self.damping_d < 0:
            raise InvalidNetwork(f"generator at bus {self.bus_id}: negative gain")
        if self.governor_tc <= 0:
            raise InvalidNetwork(f"generator at bus {self.bus_id}: governor_tc <= 0")
        if self.xd_prime <= 0:
            raise InvalidNetwork(f"generator at bus {self.bus_id}: xd_prime <= 0")


@dataclass(frozen=True)
class Injection:
    """A zero-inertia constant active-power source (e.g. a wind farm).

    The scheduled output ``p_sched`` scales with the load level like the
    conventional dispatch; the unit contributes no inertia and no governor
    response, only a fixed injection in the power-flow balance.
    """

    bus_id: int
    p_sched: float
    p_rated: float

    def __post_init__(self):
        if not 0.0 <= self.p_sched <= self.p_rated:
            raise InvalidNetwork(
                f"injection at bus {self.bus_id}: p_sched outside [0, p_rated]"
            )


@dataclass(frozen=True)
class PowerNetwork:
    """An immutable network description plus derived index helpers."""

    base_mva: float
    nominal_frequency_hz: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    injections: tuple[Injection, ...] = ()
    name: str = "network"

    def __post_init__(self):
        ids = [b.bus_id for b in self.buses]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise InvalidNetwork("bus ids must be unique and contiguous from 1")
        if ids != sorted(ids):
            object.__setattr__(
                self, "buses", tuple(sorted(self.buses, key=lambda b: b.bus_id))
            )
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise InvalidNetwork(f"need exactly one slack bus, found {len(slacks)}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise InvalidNetwork(
                    f"branch {br.from_bus}-{br.to_bus}: endpoint not a bus"
                )
        gen_buses = [g.bus_id for g in self.generators]
        if len(set(gen_buses)) != len(gen_buses):
            raise InvalidNetwork("at most one generator per bus is supported")
        for g in self.generators:
            if g.bus_id not in known:
                raise InvalidNetwork(f"generator at unknown bus {g.bus_id}")
        for inj in self.injections:
            if inj.bus_id not in known:
                raise InvalidNetwork(f"injection at unknown bus {inj.bus_id}")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def index(self, bus_id: int) -> int:
        if not 1 <= bus_id <= self.n_buses:
            raise UnknownNode(f"bus {bus_id} not in network (1..{self.n_buses})")
        return bus_id - 1

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @property
    def gen_bus_indices(self) -> np.ndarray:
        return np.array([self.index(g.bus_id) for g in self.generators], dtype=int)

    def total_load_p(self, load_scale: float = 1.0) -> float:
        return load_scale * sum(b.load_p for b in self.buses)

    def with_load_step(self, bus_id: int, delta_p: float) -> "PowerNetwork":
        """Return a copy with ``delta_p`` added to the load at ``bus_id``.

        The step is active power only; reactive load is left untouched.
        """
        i = self.index(bus_id)
        buses = list(self.buses)
        buses[i] = replace(buses[i], load_p=buses[i].load_p + delta_p)
        return replace(self, buses=tuple(buses))

    def without_generator(self, gen_pos: int) -> "PowerNetwork":
        """Return a copy with generator ``gen_pos`` removed.

        The machine's bus becomes PQ. If it was the slack, the bus of the
        largest remaining machine (by ``p_max``) takes over as slack.
        """
        gone = self.generators[gen_pos]
        gens = tuple(g for i, g in enumerate(self.generators) if i != gen_pos)
        if not gens:
            raise InvalidNetwork("cannot remove the last generator")
        buses = list(self.buses)
        i = self.index(gone.bus_id)
        was_slack = buses[i].kind == "slack"
        buses[i] = replace(buses[i], kind="pq")
        if was_slack:
            new_slack = max(gens, key=lambda g: g.p_max)
            j = self.index(new_slack.bus_id)
            buses[j] = replace(buses[j], kind="slack")
        return replace(self, buses=tuple(buses), generators=gens)


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged AC power flow: voltage magnitudes/angles per bus and the
    resulting per-generator electrical power, all per-unit / radians."""

    network: PowerNetwork
    load_scale: float
    vm: np.ndarray
    va: np.ndarray
    gen_p: np.ndarray
    iterations: int
    mismatch_norm: float


@dataclass(frozen=True)
class SyncCoefficients:
    """Synchronizing-power coefficients of every generator toward one
    disturbance node, with the ingredients kept for inspection."""

    disturbance_node: int
    gen_bus_ids: np.ndarray
    values: np.ndarray
    v_gen: np.ndarray
    v_node: float
    delta: np.ndarray
    transfer_b: np.ndarray
    transfer_g: np.ndarray
    inertia_system_base: np.ndarray = field(default_factory=lambda: np.array([]))


def network_from_dict(data: dict) -> PowerNetwork:
    """Build a :class:`PowerNetwork` from a plain dict (the JSON layout)."""
    buses = tuple(
        Bus(
            bus_id=int(b["id"]),
            kind=b["kind"],
            load_p=float(b.get("load_p", 0.0)),
            load_q=float(b.get("load_q", 0.0)),
            voltage_setpoint=float(b.get("voltage_setpoint", 1.0)),
        )
        for b in data["buses"]
    )
    branches = tuple(
        Branch(
            from_bus=int(br["from"]),
            to_bus=int(br["to"]),
            resistance=float(br["r"]),
            reactance=float(br["x"]),
            charging=float(br.get("b", 0.0)),
            tap=float(br.get("tap", 0.0)),
        )
        for br in data["branches"]
    )
    generators = tuple(
        Generator(
            bus_id=int(g["bus"]),
            p_mech=float(g["p_mech"]),
            p_max=float(g["p_max"]),
            inertia_h=float(g["inertia_h"]),
            damping_d=float(g["damping_d"]),
            droop_gain=float(g["droop_gain"]),
            governor_tc=float(g["governor_tc"]),
            xd_prime=float(g["xd_prime"]),
        )
        for g in data["generators"]
    )
    injections = tuple(
        Injection(
            bus_id=int(w["bus"]),
            p_sched=float(w["p_sched"]),
            p_rated=float(w["p_rated"]),
        )
        for w in data.get("injections", ())
    )
    return PowerNetwork(
        base_mva=float(data.get("base_mva", 100.0)),
        nominal_frequency_hz=float(data.get("nominal_frequency_hz", 60.0)),
        buses=buses,
        branches=branches,
        generators=generators,
        injections=injections,
        name=data.get("name", "network"),
    )


def load_network(path) -> PowerNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))


def load_ieee39() -> PowerNetwork:
    """The bundled 39-bus New England system with a wind farm on bus 40."""
    text = resources.files("freqcast.data").joinpath("ieee39.json").read_text()
    return network_from_dict(json.loads(text))


def branch_admittance_matrix(net: PowerNetwork) -> np.ndarray:
    """Bus admittance matrix of the branch network alone (series elements,
    line charging, off-nominal taps); no load or machine grounding."""
    n = net.n_buses
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        i, j = net.index(br.from_bus), net.index(br.to_bus)
        y = br.series_admittance
        bc = 1j * br.charging / 2.0
        t = br.tap if br.tap not in (0.0, 1.0) else 1.0
        # standard pi model with the tap on the from side
        Y[i, i] += (y + bc) / (t * t)
        Y[j, j] += y + bc
        Y[i, j] -= y / t
        Y[j, i] -= y / t
    return Y


def build_matrices(
    net: PowerNetwork, solution: PowerFlowSolution | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Grounded admittance matrix Y and its inverse Z.

    Loads enter as constant admittances ``(P - jQ)/|V|^2`` and every machine
    grounds its bus through ``1/(j xd')``. With no solution the loads use a
    flat 1.0 pu voltage profile and 100 % load level. The inverse is checked
    against ``max|Y Z - I| < 1e-8``; failure raises :class:`SingularMatrix`.
    """
    n = net.n_buses
    Y = branch_admittance_matrix(net)
    vm = solution.vm if solution is not None else np.ones(n)
    scale = solution.load_scale if solution is not None else 1.0
    for i, bus in enumerate(net.buses):
        if bus.load_p != 0.0 or bus.load_q != 0.0:
            s_load = complex(bus.load_p, bus.load_q) * scale
            Y[i, i] += s_load.conjugate() / vm[i] ** 2
    for g in net.generators:
        Y[net.index(g.bus_id), net.index(g.bus_id)] += 1.0 / (1j * g.xd_prime)
    try:
        Z = np.linalg.inv(Y)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"admittance matrix not invertible: {exc}") from exc
    residual = np.max(np.abs(Y @ Z - np.eye(n)))
    if not residual < 1e-8:
        raise SingularMatrix(
            f"Y Z deviates from identity by {residual:.3e}; "
            "the network likely lacks a path to ground or is disconnected"
        )
    return Y, Z


def electrical_distance(Z: np.ndarray) -> np.ndarray:
    """Pairwise electrical distance ``|Z_ii + Z_jj - 2 Z_ij|``.

    Symmetric with a zero diagonal for any symmetric Z.
    """
    d = np.diag(Z)
    D = np.abs(d[:, None] + d[None, :] - Z - Z.T)
    np.fill_diagonal(D, 0.0)
    return D


def _scheduled_injections(net: PowerNetwork, load_scale: float):
    """Net scheduled P per bus and load Q per bus, both scaled."""
    n = net.n_buses
    p = np.zeros(n)
    q = np.zeros(n)
    for i, bus in enumerate(net.buses):
        p[i] -= bus.load_p * load_scale
        q[i] -= bus.load_q * load_scale
    for g in net.generators:
        p[net.index(g.bus_id)] += g.p_mech * load_scale
    for w in net.injections:
        p[net.index(w.bus_id)] += w.p_sched * load_scale
    return p, q


def solve_power_flow(
    net: PowerNetwork,
    load_scale: float = 1.0,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
    warm_start: PowerFlowSolution | None = None,
) -> PowerFlowSolution:
    """Full Newton-Raphson AC power flow.

    Scheduled dispatch and loads both scale with ``load_scale``
    (proportional dispatch). Converges when the largest absolute P/Q
    mismatch drops below ``tol``; raises :class:`NoConvergence` after
    ``max_iter`` iterations and :class:`InfeasibleDispatch` when capacity
    cannot cover the scaled load.
    """
    if not 0.0 < load_scale <= 1.5:
        raise ValueError(f"load_scale {load_scale} outside (0, 1.5]")
    capacity = sum(g.p_max for g in net.generators) + sum(
        w.p_rated for w in net.injections
    )
    if capacity < net.total_load_p(load_scale):
        raise InfeasibleDispatch(
            f"capacity {capacity:.3f} pu < scaled load "
            f"{net.total_load_p(load_scale):.3f} pu"
        )

    n = net.n_buses
    Y = branch_admittance_matrix(net)
    kinds = np.array([b.kind for b in net.buses])
    slack = net.slack_index
    pv = np.flatnonzero(kinds == "pv")
    pq = np.flatnonzero(kinds == "pq")
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(n)
    va = np.zeros(n)
    setpoints = np.array([b.voltage_setpoint for b in net.buses])
    vm[pv] = setpoints[pv]
    vm[slack] = setpoints[slack]
    if warm_start is not None and warm_start.network.n_buses == n:
        vm = warm_start.vm.copy()
        va = warm_start.va.copy()
        vm[pv] = setpoints[pv]
        vm[slack] = setpoints[slack]
        va[slack] = 0.0

    p_sched, q_sched = _scheduled_injections(net, load_scale)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(Y @ v)
        dp = p_sched[pvpq] - s.real[pvpq]
        dq = q_sched[pq] - s.imag[pq]
        return np.concatenate([dp, dq]), v, s

    f, v, s = mismatch(vm, va)
    iterations = 0
    while np.max(np.abs(f)) >= tol if f.size else False:
        if iterations >= max_iter:
            raise NoConvergence(
                f"power flow not converged after {max_iter} iterations "
                f"(max mismatch {np.max(np.abs(f)):.3e})"
            )
        # complex partial derivatives of the injections S(V)
        ibus = Y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
        ds_dvm = diag_v @ np.conj(Y @ diag_vn) + np.conj(diag_i) @ diag_vn
        J11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        J12 = ds_dvm.real[np.ix_(pvpq, pq)]
        J21 = ds_dva.imag[np.ix_(pq, pvpq)]
        J22 = ds_dvm.imag[np.ix_(pq, pq)]
        J = np.block([[J11, J12], [J21, J22]])
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular Jacobian: {exc}") from exc
        va[pvpq] += dx[: pvpq.size]
        vm[pq] += dx[pvpq.size:]
        iterations += 1
        f, v, s = mismatch(vm, va)

    # generator outputs: scheduled for PV machines, balance for the slack
    gen_p = np.empty(len(net.generators))
    for k, g in enumerate(net.generators):
        i = net.index(g.bus_id)
        if i == slack:
            gen_p[k] = s.real[i] + net.buses[i].load_p * load_scale
        else:
            gen_p[k] = g.p_mech * load_scale
    mism = np.max(np.abs(f)) if f.size else 0.0
    return PowerFlowSolution(
        network=net,
        load_scale=load_scale,
        vm=vm,
        va=va,
        gen_p=gen_p,
        iterations=iterations,
        mismatch_norm=float(mism),
    )


def kron_reduce(Y: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Eliminate all nodes not in ``keep``:
    ``Y_red = Y_kk - Y_ke Y_ee^{-1} Y_ek``."""
    keep = np.asarray(keep, dtype=int)
    n = Y.shape[0]
    drop = np.setdiff1d(np.arange(n), keep)
    if drop.size == 0:
        return Y[np.ix_(keep, keep)].copy()
    Ykk = Y[np.ix_(keep, keep)]
    Yke = Y[np.ix_(keep, drop)]
    Yek = Y[np.ix_(drop, keep)]
    Yee = Y[np.ix_(drop, drop)]
    try:
        return Ykk - Yke @ np.linalg.solve(Yee, Yek)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"Kron reduction failed: {exc}") from exc


def coupling_coefficient(
    v_i: float, v_k: float, g: float, b: float, delta_ik: float
) -> float:
    """Synchronizing-power coefficient of one pair:
    ``V_i V_k (B cos(delta_ik) - G sin(delta_ik))``."""
    return v_i * v_k * (b * np.cos(delta_ik) - g * np.sin(delta_ik))


def sync_coefficients(
    solution: PowerFlowSolution, Y: np.ndarray, disturbance_node: int
) -> SyncCoefficients:
    """Synchronizing-power coefficient of every generator toward a node.

    The grounded Y is Kron-reduced to the generator buses plus the
    disturbance node; B and G are the off-diagonal entries of the reduced
    matrix between each generator bus and the node, and the angles come from
    the power-flow solution. A generator sitting exactly at the disturbance
    node has no defined transfer admittance to it; callers must remove such
    a machine first (a tripped unit) or pick a different node.
    """
    net = solution.network
    k_idx = net.index(disturbance_node)
    gen_idx = net.gen_bus_indices
    if k_idx in gen_idx:
        raise UnknownNode(
            f"bus {disturbance_node} hosts a generator; coefficients toward "
            "its own bus are undefined"
        )
    keep = np.concatenate([gen_idx, [k_idx]])
    Yred = kron_reduce(Y, keep)
    m = gen_idx.size
    vals = np.empty(m)
    bs = np.empty(m)
    gs = np.empty(m)
    deltas = np.empty(m)
    for j in range(m):
        yjk = Yred[j, m]
        bs[j] = yjk.imag
        gs[j] = yjk.real
        deltas[j] = solution.va[gen_idx[j]] - solution.va[k_idx]
        vals[j] = coupling_coefficient(
            solution.vm[gen_idx[j]], solution.vm[k_idx], gs[j], bs[j], deltas[j]
        )
    inertia = np.array(
        [g.inertia_h * g.p_max for g in net.generators]
    )  # H on the system base
    return SyncCoefficients(
        disturbance_node=disturbance_node,
        gen_bus_ids=np.array([g.bus_id for g in net.generators]),
        values=vals,
        v_gen=solution.vm[gen_idx].copy(),
        v_node=float(solution.vm[k_idx]),
        delta=deltas,
        transfer_b=bs,
        transfer_g=gs,
        inertia_system_base=inertia,
    )


def distribute_unbalanced_power(
    coeffs: SyncCoefficients, delta_p: float
) -> np.ndarray:
    """Split a power imbalance over the machines proportionally to their
    synchronizing coefficients.

    Shares sum to ``delta_p`` exactly (renormalized). When the coefficients
    sum to a non-positive value the split falls back to inertia weighting
    and a :class:`DegenerateCoefficients` warning is emitted.
    """
    weights = coeffs.values
    total = weights.sum()
    if total <= 0.0:
        warnings.warn(
            f"synchronizing coefficients toward bus {coeffs.disturbance_node} "
            f"sum to {total:.3e}; falling back to inertia-weighted shares",
            DegenerateCoefficients,
            stacklevel=2,
        )
        weights = coeffs.inertia_system_base
        total = weights.sum()
        if total <= 0.0:
            raise InvalidNetwork("no positive inertia to weight shares by")
    shares = weights * (delta_p / total)
    # force exact conservation against floating-point drift
    shares[-1] += delta_p - shares.sum()
    return shares
