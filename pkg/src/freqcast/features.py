"""Operating-point snapshots to CNN-ready tensors.

The chain: collect the 14 feature vectors per scenario, rank feature types
by the Spearman correlation of their per-sample means against the target,
min-max normalize on the training split, paint the top-k vectors onto the
embedding grid (one channel per feature, empty cells zero), then split the
tensor set and persist it to disk.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from freqcast.embedding import GridCoordinates
from freqcast.simulator import ScenarioResult

FEATURE_KEYS = (
    "gen_p_elec_t0",
    "gen_p_mech_t0",
    "gen_reserve_t0",
    "bus_voltage_t0",
    "bus_angle_t0",
    "load_p_t0",
    "gen_p_elec_tf",
    "gen_p_mech_tf",
    "gen_reserve_tf",
    "gen_shortage_tf",
    "gen_response_tf",
    "bus_voltage_tf",
    "bus_angle_tf",
    "load_p_tf",
)

GEN_FEATURE_KEYS = frozenset(
    k for k in FEATURE_KEYS if k.startswith("gen_")
)


class FeatureError(Exception):
    pass


class MissingNodeCoordinate(FeatureError):
    """A node carrying a selected feature has no grid cell."""


class ConstantSeries(UserWarning):
    """A correlation input had zero variance; its coefficient is set to 0."""


@dataclass(frozen=True)
class Sample:
    """One scenario's 14 feature vectors plus its frequency targets.

    Generator-indexed vectors follow ``gen_bus_ids``; bus-indexed vectors
    follow ``bus_ids``. Targets stay in Hz.
    """

    scenario_id: int
    gen_bus_ids: np.ndarray
    bus_ids: np.ndarray
    features: dict
    nadir_hz: float
    steady_state_hz: float

    def __post_init__(self):
        if set(self.features) != set(FEATURE_KEYS):
            missing = set(FEATURE_KEYS) - set(self.features)
            extra = set(self.features) - set(FEATURE_KEYS)
            raise FeatureError(
                f"feature keys off: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for key, vec in self.features.items():
            if not np.all(np.isfinite(vec)):
                raise FeatureError(f"non-finite values in {key}")
            want = self.gen_bus_ids if key in GEN_FEATURE_KEYS else self.bus_ids
            if np.asarray(vec).shape != want.shape:
                raise FeatureError(
                    f"{key} has shape {np.asarray(vec).shape}, "
                    f"expected {want.shape}"
                )

    def nodes_for(self, key: str) -> np.ndarray:
        return self.gen_bus_ids if key in GEN_FEATURE_KEYS else self.bus_ids

    def target(self, target_key: str = "nadir_hz") -> float:
        return float(getattr(self, target_key))


def sample_from_result(result: ScenarioResult) -> Sample:
    """Adapt one simulated scenario into a feature sample."""
    snap = result.snapshot
    return Sample(
        scenario_id=result.scenario_id,
        gen_bus_ids=snap.gen_bus_ids.copy(),
        bus_ids=snap.bus_ids.copy(),
        features={k: np.asarray(getattr(snap, k), dtype=float).copy()
                  for k in FEATURE_KEYS},
        nadir_hz=result.frequency.nadir_hz,
        steady_state_hz=result.frequency.steady_state_hz,
    )


@dataclass(frozen=True)
class FeatureRanking:
    """Spearman coefficient per feature type and the top-k selection,
    ordered by descending absolute coefficient."""

    keys: tuple
    rho: np.ndarray
    selected: tuple

    def __post_init__(self):
        if len(self.selected) > len(self.keys):
            raise FeatureError("selected more features than exist")
        if np.any(np.abs(self.rho) > 1.0 + 1e-12):
            raise FeatureError("correlation coefficient outside [-1, 1]")

    def rho_of(self, key: str) -> float:
        return float(self.rho[self.keys.index(key)])

    def as_dict(self) -> dict:
        return {
            "keys": list(self.keys),
            "rho": [float(r) for r in self.rho],
            "selected": list(self.selected),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRanking":
        return cls(keys=tuple(d["keys"]), rho=np.array(d["rho"]),
                   selected=tuple(d["selected"]))


def spearman(x, y) -> float:
    """Spearman coefficient as the Pearson correlation of average ranks
    (safe under ties). A constant series scores 0 with a warning."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FeatureError("expected two equal-length vectors")
    if np.all(x == x[0]) or np.all(y == y[0]):
        warnings.warn(
            "constant series in a Spearman correlation; returning 0",
            ConstantSeries,
            stacklevel=2,
        )
        return 0.0
    rx = sstats.rankdata(x, method="average")
    ry = sstats.rankdata(y, method="average")
    return float(np.corrcoef(rx, ry)[0, 1])


def spearman_rank(samples, target_key: str = "nadir_hz",
                  k: int = 6) -> FeatureRanking:
    """Rank the 14 feature types by |Spearman| of their per-sample vector
    means against the target, keeping the top k."""
    if len(samples) < 3:
        raise FeatureError("need at least 3 samples to rank features")
    if not 1 <= k <= len(FEATURE_KEYS):
        raise FeatureError(f"k {k} outside [1, {len(FEATURE_KEYS)}]")
    y = np.array([s.target(target_key) for s in samples])
    rho = np.empty(len(FEATURE_KEYS))
    for j, key in enumerate(FEATURE_KEYS):
        x = np.array([float(np.mean(s.features[key])) for s in samples])
        rho[j] = spearman(x, y)
    order = np.argsort(-np.abs(rho), kind="stable")
    selected = tuple(FEATURE_KEYS[i] for i in order[:k])
    return FeatureRanking(keys=FEATURE_KEYS, rho=rho, selected=selected)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature and target min/max from the training split only."""

    feature_min: dict
    feature_max: dict
    target_min: float
    target_max: float
    target_key: str = "nadir_hz"

    def normalize_feature(self, key: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.feature_min[key], self.feature_max[key]
        if hi > lo:
            return (np.asarray(values, dtype=float) - lo) / (hi - lo)
        return np.zeros_like(np.asarray(values, dtype=float))

    def normalize_target(self, hz: float) -> float:
        if self.target_max > self.target_min:
            return (hz - self.target_min) / (self.target_max - self.target_min)
        return 0.0

    def denormalize_target(self, x: float) -> float:
        return self.target_min + x * (self.target_max - self.target_min)

    def as_dict(self) -> dict:
        return {
            "feature_min": {k: float(v) for k, v in self.feature_min.items()},
            "feature_max": {k: float(v) for k, v in self.feature_max.items()},
            "target_min": float(self.target_min),
            "target_max": float(self.target_max),
            "target_key": self.target_key,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            feature_min=dict(d["feature_min"]),
            feature_max=dict(d["feature_max"]),
            target_min=d["target_min"],
            target_max=d["target_max"],
            target_key=d["target_key"],
        )


def fit_normalization(train_samples,
                      target_key: str = "nadir_hz") -> NormalizationStats:
    """Min/max per feature type over every entry of every training sample.
    Values from other splits must go through :func:`apply_normalization`
    with these statistics, never refit."""
    if not train_samples:
        raise FeatureError("cannot fit normalization on an empty split")
    fmin, fmax = {}, {}
    for key in FEATURE_KEYS:
        stacked = np.concatenate(
            [np.asarray(s.features[key], dtype=float).ravel()
             for s in train_samples]
        )
        fmin[key] = float(stacked.min())
        fmax[key] = float(stacked.max())
    targets = np.array([s.target(target_key) for s in train_samples])
    return NormalizationStats(
        feature_min=fmin,
        feature_max=fmax,
        target_min=float(targets.min()),
        target_max=float(targets.max()),
        target_key=target_key,
    )


def apply_normalization(stats: NormalizationStats, sample: Sample) -> Sample:
    """Rescale every feature vector with the training statistics. Values
    outside the training range land outside [0, 1] and stay there; targets
    are left in Hz."""
    feats = {
        key: stats.normalize_feature(key, sample.features[key])
        for key in FEATURE_KEYS
    }
    return Sample(
        scenario_id=sample.scenario_id,
        gen_bus_ids=sample.gen_bus_ids,
        bus_ids=sample.bus_ids,
        features=feats,
        nadir_hz=sample.nadir_hz,
        steady_state_hz=sample.steady_state_hz,
    )


@dataclass(frozen=True)
class TensorSample:
    """One h x h x k input tensor and its regression target.

    ``target`` is what the network trains on (normalized when statistics
    were supplied); ``target_hz`` always keeps the physical value.
    """

    scenario_id: int
    tensor: np.ndarray
    target: float
    target_hz: float


def tensorize(sample: Sample, grid: GridCoordinates, ranking: FeatureRanking,
              stats: NormalizationStats | None = None) -> TensorSample:
    """Paint the selected feature vectors onto the grid, one channel per
    feature in descending |rho| order. Cells without a node stay exactly 0.

    With ``stats`` the features and target are normalized on the way in;
    without, the sample is taken as already scaled and the target stays
    in Hz.
    """
    if stats is not None:
        sample = apply_normalization(stats, sample)
    h = grid.h
    k = len(ranking.selected)
    cell = {
        int(node): (int(r), int(c))
        for node, (r, c) in zip(grid.node_ids, grid.cells)
    }
    tensor = np.zeros((h, h, k))
    for c, key in enumerate(ranking.selected):
        nodes = sample.nodes_for(key)
        values = np.asarray(sample.features[key], dtype=float)
        for node, value in zip(nodes, values):
            if int(node) not in cell:
                raise MissingNodeCoordinate(
                    f"node {node} (feature {key}) has no grid cell"
                )
            row, col = cell[int(node)]
            tensor[row - 1, col - 1, c] = value
    target_hz = sample.target(stats.target_key if stats else "nadir_hz")
    target = stats.normalize_target(target_hz) if stats else target_hz
    return TensorSample(
        scenario_id=sample.scenario_id,
        tensor=tensor,
        target=float(target),
        target_hz=float(target_hz),
    )


def grid_as_dict(grid: GridCoordinates) -> dict:
    return {
        "h": int(grid.h),
        "cells": [[int(r), int(c)] for r, c in grid.cells],
        "node_ids": [int(i) for i in grid.node_ids],
        "relocations": [
            [int(pos), [int(w[0]), int(w[1])], [int(s[0]), int(s[1])]]
            for pos, w, s in grid.relocations
        ],
    }


def grid_from_dict(d: dict) -> GridCoordinates:
    return GridCoordinates(
        cells=np.array(d["cells"], dtype=int),
        h=int(d["h"]),
        relocations=tuple(
            (pos, (w[0], w[1]), (s[0], s[1]))
            for pos, w, s in d["relocations"]
        ),
        node_ids=np.array(d["node_ids"], dtype=int),
    )


_RECORD_HEADER = struct.Struct("<3d")


def _record_bytes(ts: TensorSample) -> bytes:
    h, _, k = ts.tensor.shape
    header = _RECORD_HEADER.pack(float(h), float(k), float(ts.target))
    return header + np.ascontiguousarray(ts.tensor, dtype="<f8").tobytes()


def _record_from_bytes(raw: bytes, scenario_id: int,
                       target_hz: float) -> TensorSample:
    h_f, k_f, target = _RECORD_HEADER.unpack_from(raw, 0)
    h, k = int(h_f), int(k_f)
    body = np.frombuffer(raw, dtype="<f8", offset=_RECORD_HEADER.size)
    if body.size != h * h * k:
        raise FeatureError(
            f"tensor record holds {body.size} values, expected {h * h * k}"
        )
    return TensorSample(
        scenario_id=scenario_id,
        tensor=body.reshape(h, h, k).copy(),
        target=float(target),
        target_hz=float(target_hz),
    )


def split_and_persist(tensor_samples, train_count: int, seed: int, path,
                      grid: GridCoordinates | None = None,
                      ranking: FeatureRanking | None = None,
                      stats: NormalizationStats | None = None,
                      meta: dict | None = None):
    """Shuffle with a seeded generator, split in two, write to disk.

    Layout: ``manifest.json`` (split, grid, ranking, statistics, seed),
    ``index.csv`` (one row per record), ``sample_<id>.bin`` tensor records.
    Returns (train ids, test ids).
    """
    n = len(tensor_samples)
    if not 1 <= train_count < n:
        raise FeatureError(
            f"train_count {train_count} must be in [1, {n - 1}] "
            f"for {n} samples"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_ids = [int(tensor_samples[i].scenario_id)
                 for i in perm[:train_count]]
    test_ids = [int(tensor_samples[i].scenario_id) for i in perm[train_count:]]

    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": "freqcast-tensors",
            "version": 1,
            "seed": int(seed),
            "count": n,
            "train_count": int(train_count),
            "train_ids": train_ids,
            "test_ids": test_ids,
            "grid": grid_as_dict(grid) if grid is not None else None,
            "ranking": ranking.as_dict() if ranking is not None else None,
            "stats": stats.as_dict() if stats is not None else None,
        }
        if meta:
            manifest["meta"] = meta
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out / "index.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["record", "scenario_id", "split", "target",
                             "target_hz"])
            id_split = {sid: "train" for sid in train_ids}
            id_split.update({sid: "test" for sid in test_ids})
            for ts in tensor_samples:
                name = f"sample_{ts.scenario_id:05d}.bin"
                writer.writerow([name, ts.scenario_id,
                                 id_split[ts.scenario_id],
                                 repr(float(ts.target)),
                                 repr(float(ts.target_hz))])
                with open(out / name, "wb") as rec:
                    rec.write(_record_bytes(ts))
    except OSError as exc:
        raise FeatureError(f"failed to persist dataset at {out}: {exc}") from exc
    return train_ids, test_ids


def load_tensor_dataset(path):
    """Read a persisted tensor dataset: (train samples, test samples,
    manifest). Tensors come back bit-identical."""
    out = Path(path)
    with open(out / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    by_id = {}
    with open(out / "index.csv", "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            raw = (out / row["record"]).read_bytes()
            sid = int(row["scenario_id"])
            by_id[sid] = _record_from_bytes(raw, sid,
                                            float(row["target_hz"]))
    train = [by_id[sid] for sid in manifest["train_ids"]]
    test = [by_id[sid] for sid in manifest["test_ids"]]
    return train, test, manifest
