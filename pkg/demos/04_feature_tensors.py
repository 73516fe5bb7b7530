"""From simulated scenarios to network-shaped training tensors.

Generates a small batch of disturbance scenarios, ranks the 14 operating
features by Spearman correlation with the frequency nadir, and rasterizes
one sample onto the embedding grid: each selected feature becomes one h x h
channel whose occupied cells hold that node's value.
"""

from dataclasses import replace

import numpy as np

from freqcast.embedding import TsneConfig, grid_map, run_tsne
from freqcast.features import (
    fit_normalization,
    sample_from_result,
    spearman_rank,
    tensorize,
)
from freqcast.network import build_matrices, electrical_distance, load_ieee39
from freqcast.simulator import generate_scenario_set

net = load_ieee39()
results, excluded = generate_scenario_set(net, count=40, seed=3)
print(f"simulated {len(results)} scenarios ({len(excluded)} excluded)")

samples = [sample_from_result(r) for r in results]
nadirs = np.array([s.nadir_hz for s in samples])
print(f"nadir range {nadirs.min():.3f} .. {nadirs.max():.3f} Hz")

ranking = spearman_rank(samples, target_key="nadir_hz", k=6)
print("\nfeature ranking (|Spearman| vs nadir):")
for key in ranking.keys:
    marker = "*" if key in ranking.selected else " "
    print(f" {marker} {key:18s} {ranking.rho_of(key):+.3f}")

# embed the buses once; every sample shares the same grid
_, Z = build_matrices(net)
emb = run_tsne(electrical_distance(Z), TsneConfig(perplexity=10.0, seed=1))
grid = replace(grid_map(emb.coords, h=32),
               node_ids=np.array([b.bus_id for b in net.buses]))

stats = fit_normalization(samples, target_key="nadir_hz")
ts = tensorize(samples[0], grid, ranking, stats)
print(f"\nsample 0 ({samples[0].scenario_id}): tensor {ts.tensor.shape}, "
      f"target {ts.target:.4f} (normalized), {ts.target_hz:.4f} Hz")
occupied = np.count_nonzero(np.any(ts.tensor != 0.0, axis=2))
print(f"occupied cells: {occupied} of {ts.tensor.shape[0] * ts.tensor.shape[1]}")
for c, key in enumerate(ranking.selected):
    ch = ts.tensor[:, :, c]
    print(f"  channel {c} = {key:18s} sum {ch.sum():8.3f}  max {ch.max():.3f}")
