"""Electrical distances on the 39-bus New England system.

Solves the AC power flow, forms the admittance and impedance matrices, and
prints the electrically closest and farthest bus pairs. The distance between
buses i and j is |Z_ii + Z_jj - 2 Z_ij|, the driving-point impedance of the
loop between them.
"""

import numpy as np

from freqcast.network import (
    build_matrices,
    electrical_distance,
    load_ieee39,
    solve_power_flow,
)

net = load_ieee39()
solution = solve_power_flow(net, load_scale=1.0)
print(f"{net.name}: {net.n_buses} buses, {len(net.generators)} machines")
print(f"power flow converged in {solution.iterations} iterations, "
      f"mismatch norm {solution.mismatch_norm:.2e} pu")

Y, Z = build_matrices(net, solution)
D = electrical_distance(Z)
residual = np.max(np.abs(Y @ Z - np.eye(net.n_buses)))
print(f"inverse residual max|YZ - I| = {residual:.2e}")

bus_ids = np.array([b.bus_id for b in net.buses])
iu = np.triu_indices(net.n_buses, k=1)
order = np.argsort(D[iu])

print("\nclosest pairs (pu):")
for k in order[:5]:
    i, j = iu[0][k], iu[1][k]
    print(f"  bus {bus_ids[i]:2d} - bus {bus_ids[j]:2d}   {D[i, j]:.5f}")

print("\nfarthest pairs (pu):")
for k in order[-5:]:
    i, j = iu[0][k], iu[1][k]
    print(f"  bus {bus_ids[i]:2d} - bus {bus_ids[j]:2d}   {D[i, j]:.5f}")
