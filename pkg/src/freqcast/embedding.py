"""t-SNE embedding of electrical-distance rows and snapping to a pixel grid.

The high-dimensional input is the n x n distance matrix treated as n points
in n dimensions (one row per node). t-SNE is implemented from scratch on
numpy: Gaussian conditional affinities with a per-point bandwidth found by
binary search on the perplexity, symmetrized joint affinities, Student-t
low-dimensional kernel normalized over all distinct pairs, and plain
momentum gradient descent with early exaggeration. Natural log throughout.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np


class EmbeddingError(Exception):
    pass


class PerplexityOutOfRange(EmbeddingError):
    """Perplexity must sit in (1, n-1]."""


class GridTooSmall(EmbeddingError):
    """More nodes than grid cells."""


class DegenerateDistances(UserWarning):
    """A point has zero distance to every other point; its affinity row
    falls back to uniform."""


class DegenerateAxis(UserWarning):
    """An embedding axis has zero spread; every node maps to coordinate 1
    on that axis before collision resolution."""


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 10.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    seed: int = 0


@dataclass(frozen=True)
class AffinityMatrices:
    """Conditional p_{j|i} (rows sum to 1), joint p_ij (sums to 1), and the
    per-point Gaussian bandwidth sigma_i."""

    conditional: np.ndarray
    joint: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray
    kl_initial: float
    kl_final: float
    kl_trace: np.ndarray
    iterations: int
    seed: int


@dataclass(frozen=True)
class GridCoordinates:
    """1-based integer cells, one per node, all distinct, inside [1, h]^2.

    ``relocations`` records ``(node_pos, wanted_cell, assigned_cell)`` for
    every node that lost a collision; ``node_ids`` carries the external
    labels (defaults to 1..n in input order).
    """

    cells: np.ndarray
    h: int
    relocations: tuple = ()
    node_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def cell_of(self, node_id: int) -> tuple[int, int]:
        pos = int(np.flatnonzero(self.node_ids == node_id)[0])
        return int(self.cells[pos, 0]), int(self.cells[pos, 1])


def _row_entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum() / np.log(2.0))


def _conditional_row(d2: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian affinities for one point given squared distances to the
    others; max-shifted for numerical stability."""
    logits = -d2 / (2.0 * sigma * sigma)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def input_affinities(points: np.ndarray, perplexity: float) -> AffinityMatrices:
    """Per-point-bandwidth Gaussian affinities at a fixed perplexity.

    sigma_i is found by binary search (at most 50 halvings after bracketing)
    so that 2^entropy(p_{.|i}) matches ``perplexity`` within 1e-4. The joint
    distribution is the symmetrized (p_{j|i} + p_{i|j}) / (2n).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise EmbeddingError("need at least two points")
    if not np.all(np.isfinite(X)):
        raise EmbeddingError("points must be finite")
    n = X.shape[0]
    if not 1.0 < perplexity <= n - 1:
        raise PerplexityOutOfRange(
            f"perplexity {perplexity} outside (1, {n - 1}] for n={n}"
        )
    sq = (X * X).sum(axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)

    target = float(perplexity)
    cond = np.zeros((n, n))
    sigmas = np.empty(n)
    others = np.arange(n)
    for i in range(n):
        mask = others != i
        d2 = D2[i, mask]
        if d2.max() <= 0.0:
            warnings.warn(
                f"point {i} coincides with every other point; "
                "using a uniform affinity row",
                DegenerateDistances,
                stacklevel=2,
            )
            cond[i, mask] = 1.0 / (n - 1)
            sigmas[i] = np.nan
            continue
        lo, hi = 0.0, np.inf
        sigma = 1.0
        for _ in range(50):
            p = _conditional_row(d2, sigma)
            perp = 2.0 ** _row_entropy_bits(p)
            if abs(perp - target) <= 1e-4:
                break
            if perp > target:  # too smooth, shrink sigma
                hi = sigma
                sigma = (lo + hi) / 2.0
            else:
                lo = sigma
                sigma = sigma * 2.0 if hi == np.inf else (lo + hi) / 2.0
        cond[i, mask] = _conditional_row(d2, sigma)
        sigmas[i] = sigma
    joint = (cond + cond.T) / (2.0 * n)
    return AffinityMatrices(conditional=cond, joint=joint, sigma=sigmas)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of p*ln(p/q) over the entries where p > 0 (natural log)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0.0
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def _student_t_q(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t similarities: returns (q, num) with num = 1/(1+d^2) and q
    normalized over all distinct pairs."""
    sq = (Y * Y).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T, 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return q, num


def kl_objective(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL cost and its gradient with respect to the 2-D coordinates.

    gradient_i = 4 * sum_j (p_ij - q_ij) * (y_i - y_j) / (1 + |y_i - y_j|^2)
    """
    P = np.asarray(P, dtype=float)
    Y = np.asarray(Y, dtype=float)
    q, num = _student_t_q(Y)
    cost = kl_divergence(P, q)
    W = (P - q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) @ Y - W @ Y)
    return cost, grad


def run_tsne(points: np.ndarray, config: TsneConfig) -> Embedding:
    """Momentum gradient descent on the KL objective.

    Early exaggeration multiplies P inside the gradient for the first
    ``exaggeration_iters`` iterations; the recorded KL trace always uses the
    true P, so the trace is comparable across schedule phases. Deterministic
    for a given seed.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise EmbeddingError("points must be a 2-D array")
    n = X.shape[0]
    if n == 1:
        zero = np.zeros((1, 2))
        return Embedding(zero, 0.0, 0.0, np.zeros(1), 0, config.seed)
    aff = input_affinities(X, config.perplexity)
    P = aff.joint
    rng = np.random.default_rng(config.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    vel = np.zeros_like(Y)
    trace = np.empty(config.iterations + 1)
    trace[0], _ = kl_objective(P, Y)
    for t in range(1, config.iterations + 1):
        P_eff = P * config.exaggeration if t <= config.exaggeration_iters else P
        _, grad = kl_objective(P_eff, Y)
        mom = (
            config.momentum_start
            if t < config.momentum_switch
            else config.momentum_final
        )
        vel = mom * vel - config.learning_rate * grad
        Y = Y + vel
        Y = Y - Y.mean(axis=0)  # keep the layout centered
        trace[t], _ = kl_objective(P, Y)
    return Embedding(
        coords=Y,
        kl_initial=float(trace[0]),
        kl_final=float(trace[-1]),
        kl_trace=trace,
        iterations=config.iterations,
        seed=config.seed,
    )


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(int)


def grid_map(embedding, h: int) -> GridCoordinates:
    """Snap 2-D coordinates onto the integer grid [1, h]^2.

    Each axis is linearly rescaled so its minimum lands on 1 and its maximum
    on h, then rounded half-up. Nodes are processed in ascending position;
    a node whose cell is taken moves to the nearest free cell by growing
    Chebyshev rings, ties broken by smaller row then smaller column. Every
    move is recorded.
    """
    coords = embedding.coords if isinstance(embedding, Embedding) else np.asarray(embedding, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise EmbeddingError("expected n x 2 coordinates")
    n = coords.shape[0]
    if n > h * h:
        raise GridTooSmall(f"{n} nodes cannot fit a {h}x{h} grid")
    cells = np.ones((n, 2), dtype=int)
    for axis in range(2):
        v = coords[:, axis]
        lo, hi = v.min(), v.max()
        if hi == lo:
            warnings.warn(
                f"axis {axis} has zero spread; all nodes map to coordinate 1",
                DegenerateAxis,
                stacklevel=2,
            )
            continue
        cells[:, axis] = np.clip(
            _round_half_up(1.0 + (h - 1.0) * (v - lo) / (hi - lo)), 1, h
        )

    taken: dict[tuple[int, int], int] = {}
    relocations = []
    final = np.empty_like(cells)
    for i in range(n):
        want = (int(cells[i, 0]), int(cells[i, 1]))
        if want not in taken:
            taken[want] = i
            final[i] = want
            continue
        spot = _nearest_free_cell(want, taken, h)
        taken[spot] = i
        final[i] = spot
        relocations.append((i, want, spot))
    return GridCoordinates(
        cells=final,
        h=h,
        relocations=tuple(relocations),
        node_ids=np.arange(1, n + 1),
    )


def _nearest_free_cell(want, taken, h):
    """Scan Chebyshev rings of growing radius for the first free in-bounds
    cell; within a ring the smallest (row, col) wins."""
    r0, c0 = want
    for radius in range(1, 2 * h):
        ring = []
        for r in range(max(1, r0 - radius), min(h, r0 + radius) + 1):
            for c in range(max(1, c0 - radius), min(h, c0 + radius) + 1):
                if max(abs(r - r0), abs(c - c0)) == radius and (r, c) not in taken:
                    ring.append((r, c))
        if ring:
            return min(ring)
    raise GridTooSmall(f"no free cell near {want} on a {h}x{h} grid")


def export_embedding_csv(path, grid: GridCoordinates, coords: np.ndarray) -> None:
    """Write ``node_id,y1,y2,grid_row,grid_col`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "y1", "y2", "grid_row", "grid_col"])
        for pos in range(grid.cells.shape[0]):
            writer.writerow(
                [
                    int(grid.node_ids[pos]),
                    repr(float(coords[pos, 0])),
                    repr(float(coords[pos, 1])),
                    int(grid.cells[pos, 0]),
                    int(grid.cells[pos, 1]),
                ]
            )


def export_embedding_svg(path, grid: GridCoordinates, coords: np.ndarray) -> None:
    """Scatter plot of the 2-D layout with node labels."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "freqcast"
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(coords[:, 0], coords[:, 1], s=24, c="tab:blue")
    for pos in range(coords.shape[0]):
        ax.annotate(
            str(int(grid.node_ids[pos])),
            (coords[pos, 0], coords[pos, 1]),
            textcoords="offset points",
            xytext=(3, 3),
            fontsize=7,
        )
    ax.set_xlabel("y1")
    ax.set_ylabel("y2")
    ax.set_title("node embedding")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
