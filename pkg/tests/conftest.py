"""Shared fixtures and small test-network factories."""

import numpy as np
import pytest

from freqcast.network import Branch, Bus, Generator, PowerNetwork


def two_bus_resistive() -> PowerNetwork:
    """Two 1.0 pu loads joined by a 0.1 pu resistance.

    Grounded admittance matrix [[11,-10],[-10,11]], hand-invertible.
    """
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=(
            Bus(1, "slack", load_p=1.0),
            Bus(2, "pq", load_p=1.0),
        ),
        branches=(Branch(1, 2, resistance=0.1, reactance=0.0),),
        generators=(),
    )


def two_machine_lossless(x_line: float = 0.2) -> PowerNetwork:
    """Two machines over one pure reactance; the workhorse for coupling and
    swing-equation hand checks."""
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=(
            Bus(1, "slack", load_p=0.5),
            Bus(2, "pv", load_p=0.5),
        ),
        branches=(Branch(1, 2, resistance=0.0, reactance=x_line),),
        generators=(
            Generator(1, p_mech=0.5, p_max=2.0, inertia_h=4.0, damping_d=1.0,
                      droop_gain=20.0, governor_tc=4.0, xd_prime=0.1),
            Generator(2, p_mech=0.5, p_max=2.0, inertia_h=4.0, damping_d=1.0,
                      droop_gain=20.0, governor_tc=4.0, xd_prime=0.1),
        ),
    )


def random_radial_network(rng: np.random.Generator, n: int | None = None) -> PowerNetwork:
    """A random tree network with one slack machine at bus 1 and a load at
    every other bus; always connected, always grounded through the loads."""
    if n is None:
        n = int(rng.integers(3, 12))
    branches = []
    buses = [Bus(1, "slack", load_p=0.2)]
    total = 0.2
    for i in range(2, n + 1):
        parent = int(rng.integers(1, i))
        x = float(rng.uniform(0.05, 0.3))
        branches.append(Branch(parent, i, resistance=0.1 * x, reactance=x))
        load = float(rng.uniform(0.1, 0.5))
        total += load
        buses.append(Bus(i, "pq", load_p=load, load_q=0.2 * load))
    gen = Generator(1, p_mech=round(total, 6), p_max=2.0 * total + 1.0,
                    inertia_h=4.0, damping_d=1.0, droop_gain=20.0,
                    governor_tc=4.0, xd_prime=0.15)
    return PowerNetwork(
        base_mva=100.0,
        nominal_frequency_hz=60.0,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=(gen,),
    )


@pytest.fixture(scope="session")
def ieee39():
    from freqcast.network import load_ieee39

    return load_ieee39()
