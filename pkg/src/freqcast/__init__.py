"""freqcast: frequency-nadir prediction for multi-machine power systems.

The package chains four stages:

1. ``network``   -- admittance/impedance matrices, AC power flow, electrical
   distances between nodes, synchronizing-power coefficients.
2. ``embedding`` -- t-SNE of the electrical-distance matrix and snapping of
   the 2-D embedding onto an integer pixel grid.
3. ``simulator`` -- multi-machine swing-equation response to generator trips
   and load steps; produces frequency targets and operating-point snapshots.
4. ``features`` / ``nn`` -- rasterized feature tensors and a from-scratch
   numpy CNN (plus an MLP baseline) that regresses the frequency nadir.

``harness`` wires the stages into a reproducible pipeline with a CLI.
"""

from freqcast import embedding, features, harness, network, nn, simulator

__all__ = ["network", "embedding", "simulator", "features", "nn", "harness"]
__version__ = "0.1.0"
