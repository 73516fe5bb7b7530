"""From electrical distances to a 2-D cell grid.

Embeds the 39-bus system's buses with t-SNE, using the pairwise electrical
distances as the high-dimensional geometry, then snaps the planar embedding
onto a 32x32 integer grid. Electrically close buses land in nearby cells,
which is what lets a convolution see network structure later on.

Writes embedding.svg and embedding.csv next to this script.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from freqcast.embedding import (
    TsneConfig,
    export_embedding_csv,
    export_embedding_svg,
    grid_map,
    run_tsne,
)
from freqcast.network import build_matrices, electrical_distance, load_ieee39

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

net = load_ieee39()
_, Z = build_matrices(net)
D = electrical_distance(Z)
print(f"distance matrix {D.shape}, mean off-diagonal "
      f"{D[~np.eye(len(D), dtype=bool)].mean():.4f} pu")

emb = run_tsne(D, TsneConfig(perplexity=10.0, iterations=1000, seed=1))
print(f"KL divergence {emb.kl_initial:.4f} -> {emb.kl_final:.4f} "
      f"over {emb.iterations} iterations")

grid = grid_map(emb.coords, h=32)
grid = replace(grid, node_ids=np.array([b.bus_id for b in net.buses]))
print(f"{len(grid.cells)} buses on a {grid.h}x{grid.h} grid, "
      f"{len(grid.relocations)} collision relocations")
for bus in (31, 39, 40):
    print(f"  bus {bus} -> cell {grid.cell_of(bus)}")

export_embedding_csv(out / "embedding.csv", grid, emb.coords)
export_embedding_svg(out / "embedding.svg", grid, emb.coords)
print(f"wrote {out / 'embedding.csv'} and {out / 'embedding.svg'}")
