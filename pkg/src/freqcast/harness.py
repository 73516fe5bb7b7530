"""Pipeline orchestration: simulate, embed, tensorize, train, evaluate.

Each stage reads and writes a fixed spot inside one workspace directory, so
any stage can rerun from the artifacts of the previous one:

    workspace/
      config.json              resolved configuration + hash
      dataset/                 simulated scenarios (manifest + samples.csv)
      embedding/               2-D layout, grid cells (csv, svg, grid.json)
      tensors/                 binary tensor records + split manifest
      models/                  checkpoints, loss traces, baseline stats
      reports/                 metrics, per-sample predictions, plots
      timings.json             wall-clock seconds per stage

Every report embeds the configuration hash and the seeds, and a rerun with
the same config is byte-identical everywhere except timings.json.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from freqcast import features as feat
from freqcast import nn
from freqcast import simulator as sim
from freqcast.embedding import (
    GridCoordinates,
    TsneConfig,
    export_embedding_csv,
    export_embedding_svg,
    grid_map,
    run_tsne,
)
from freqcast.network import (
    PowerNetwork,
    build_matrices,
    electrical_distance,
    load_ieee39,
    load_network,
)

log = logging.getLogger(__name__)

MODEL_CHOICES = ("cnn", "mlp", "mean")

# Accuracy reference point for a comparable convolutional predictor,
# reported in the literature on a proprietary utility dataset. Shown next
# to measured rows for context, never asserted against.
REFERENCE_CNN = {"mae_hz": 0.0018, "mape": 3.0698e-05, "rmse_hz": 0.0024}


class HarnessError(Exception):
    pass


class StageError(HarnessError):
    """A pipeline stage failed; carries the stage name and artifact path."""

    def __init__(self, stage: str, message: str, path=None):
        self.stage = stage
        self.path = Path(path) if path is not None else None
        where = f" [{self.path}]" if self.path is not None else ""
        super().__init__(f"stage '{stage}' failed{where}: {message}")


class ZeroPrediction(UserWarning):
    """A zero prediction was excluded from the MAPE denominator."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one end-to-end run needs. The master ``seed`` fans out to
    the stages at fixed offsets: simulate +0, t-SNE +1, split +2, train +3.
    """

    network: str = "ieee39"
    workspace: str = "workspace"
    scenario_count: int = 300
    seed: int = 0
    dt: float = 0.01
    horizon: float = 60.0
    grid_h: int = 32
    top_k: int = 6
    target_key: str = "nadir_hz"
    train_count: int = 220
    models: tuple = MODEL_CHOICES
    tsne: TsneConfig = field(default_factory=TsneConfig)
    training: nn.TrainConfig = field(default_factory=nn.TrainConfig)

    def __post_init__(self):
        for m in self.models:
            if m not in MODEL_CHOICES:
                raise HarnessError(
                    f"unknown model {m!r}; choices: {MODEL_CHOICES}"
                )
        if self.target_key not in ("nadir_hz", "steady_state_hz"):
            raise HarnessError(f"unknown target {self.target_key!r}")

    def to_dict(self) -> dict:
        d = {
            "network": self.network,
            "workspace": str(self.workspace),
            "scenario_count": self.scenario_count,
            "seed": self.seed,
            "dt": self.dt,
            "horizon": self.horizon,
            "grid_h": self.grid_h,
            "top_k": self.top_k,
            "target_key": self.target_key,
            "train_count": self.train_count,
            "models": list(self.models),
            "tsne": {
                "perplexity": self.tsne.perplexity,
                "iterations": self.tsne.iterations,
                "learning_rate": self.tsne.learning_rate,
                "momentum_start": self.tsne.momentum_start,
                "momentum_final": self.tsne.momentum_final,
                "momentum_switch": self.tsne.momentum_switch,
                "exaggeration": self.tsne.exaggeration,
                "exaggeration_iters": self.tsne.exaggeration_iters,
            },
            "training": {
                "learning_rate": self.training.learning_rate,
                "epochs": self.training.epochs,
                "batch_size": self.training.batch_size,
                "beta1": self.training.beta1,
                "beta2": self.training.beta2,
                "eps": self.training.eps,
                "shuffle": self.training.shuffle,
            },
        }
        return d

    def config_hash(self) -> str:
        """Hash of everything that shapes the results. The workspace path
        is excluded: the same experiment in two directories is the same
        experiment."""
        d = self.to_dict()
        del d["workspace"]
        blob = json.dumps(d, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {
            "network", "workspace", "scenario_count", "seed", "dt",
            "horizon", "grid_h", "top_k", "target_key", "train_count",
            "models", "tsne", "training",
        }
        unknown = set(d) - known
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        if "models" in d:
            d["models"] = tuple(d["models"])
        if "tsne" in d:
            d["tsne"] = TsneConfig(**d["tsne"])
        if "training" in d:
            d["training"] = nn.TrainConfig(**d["training"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EvaluationReport:
    """Accuracy of one model over the test split, plus the per-sample
    prediction table the metrics are computed from."""

    model: str
    n_test: int
    mae_hz: float
    mape: float
    rmse_hz: float
    rows: tuple

    def __post_init__(self):
        if min(self.mae_hz, self.mape, self.rmse_hz) < 0.0:
            raise HarnessError("metrics must be nonnegative")
        if len(self.rows) != self.n_test:
            raise HarnessError("prediction table length != test size")


@dataclass(frozen=True)
class MeanBaseline:
    """Predicts the training-set mean target for every input."""

    mean_hz: float
    n_train: int


def evaluate_metrics(predictions, actuals, scenario_ids=None,
                     model: str = "model") -> EvaluationReport:
    """MAE, MAPE and RMSE of predictions against actuals, both in Hz.

    MAPE divides each absolute error by the magnitude of the *prediction*;
    zero predictions are excluded from that mean with a warning. The
    per-sample table also carries the actual-normalized variant.
    """
    pred = np.asarray(predictions, dtype=float)
    act = np.asarray(actuals, dtype=float)
    if pred.shape != act.shape or pred.ndim != 1 or pred.size == 0:
        raise HarnessError(
            f"predictions {pred.shape} vs actuals {act.shape}; need equal "
            "nonzero-length vectors"
        )
    if scenario_ids is None:
        scenario_ids = np.arange(pred.size)
    err = np.abs(pred - act)
    nonzero = pred != 0.0
    if not np.all(nonzero):
        warnings.warn(
            f"{int((~nonzero).sum())} zero prediction(s) excluded from MAPE",
            ZeroPrediction,
            stacklevel=2,
        )
    mape = float(np.mean(err[nonzero] / np.abs(pred[nonzero]))) \
        if np.any(nonzero) else 0.0
    rows = tuple(
        {
            "scenario_id": int(sid),
            "actual_hz": float(a),
            "predicted_hz": float(p),
            "abs_err_hz": float(e),
            "ape_pred": float(e / abs(p)) if p != 0.0 else float("nan"),
            "ape_actual": float(e / abs(a)) if a != 0.0 else float("nan"),
        }
        for sid, a, p, e in zip(scenario_ids, act, pred, err)
    )
    return EvaluationReport(
        model=model,
        n_test=int(pred.size),
        mae_hz=float(np.mean(err)),
        mape=mape,
        rmse_hz=float(np.sqrt(np.mean(err ** 2))),
        rows=rows,
    )


def _load_net(config: PipelineConfig) -> PowerNetwork:
    if config.network == "ieee39":
        return load_ieee39()
    return load_network(config.network)


def _ws(config: PipelineConfig) -> Path:
    return Path(config.workspace)


def _write_config(config: PipelineConfig) -> None:
    ws = _ws(config)
    ws.mkdir(parents=True, exist_ok=True)
    with open(ws / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"config": config.to_dict(),
                   "hash": config.config_hash()},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")


def stage_simulate(config: PipelineConfig):
    """Generate the scenario set and persist it under ``dataset/``."""
    ws = _ws(config)
    try:
        net = _load_net(config)
        results, exclusions = sim.generate_scenario_set(
            net, config.scenario_count, config.seed,
            dt=config.dt, horizon=config.horizon,
        )
        if not results:
            raise HarnessError("every scenario was excluded")
        sim.save_dataset(
            ws / "dataset", results, exclusions,
            meta={"network": config.network, "seed": config.seed,
                  "config_hash": config.config_hash()},
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("simulate", str(exc), ws / "dataset") from exc
    log.info("simulate: %d scenarios kept, %d excluded",
             len(results), len(exclusions))
    return results, exclusions


def stage_embed(config: PipelineConfig):
    """Electrical distances -> 2-D layout -> integer grid, persisted under
    ``embedding/``. Pure function of the network file, so it never touches
    the scenario set."""
    ws = _ws(config)
    out = ws / "embedding"
    try:
        net = _load_net(config)
        _, Z = build_matrices(net)
        D = electrical_distance(Z)
        emb = run_tsne(D, replace(config.tsne, seed=config.seed + 1))
        grid = grid_map(emb, config.grid_h)
        grid = replace(
            grid, node_ids=np.array([b.bus_id for b in net.buses])
        )
        out.mkdir(parents=True, exist_ok=True)
        export_embedding_csv(out / "embedding.csv", grid, emb.coords)
        export_embedding_svg(out / "embedding.svg", grid, emb.coords)
        with open(out / "grid.json", "w", encoding="utf-8") as fh:
            json.dump(feat.grid_as_dict(grid), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out / "kl_trace.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "kl"])
            for i, v in enumerate(emb.kl_trace):
                writer.writerow([i, repr(float(v))])
    except StageError:
        raise
    except Exception as exc:
        raise StageError("embed", str(exc), out) from exc
    log.info("embed: KL %.4f -> %.4f, %d relocations",
             emb.kl_initial, emb.kl_final, len(grid.relocations))
    return grid, emb


def stage_tensorize(config: PipelineConfig, results=None,
                    grid: GridCoordinates | None = None):
    """Rank features on the training split, normalize, rasterize, split,
    persist under ``tensors/``. Missing inputs are read back from the
    workspace."""
    ws = _ws(config)
    out = ws / "tensors"
    try:
        if results is None:
            results, _ = sim.load_dataset(ws / "dataset")
        if grid is None:
            with open(ws / "embedding" / "grid.json", encoding="utf-8") as fh:
                grid = feat.grid_from_dict(json.load(fh))
        samples = [feat.sample_from_result(r) for r in results]
        n = len(samples)
        if not 1 <= config.train_count < n:
            raise HarnessError(
                f"train_count {config.train_count} infeasible for "
                f"{n} samples"
            )
        perm = np.random.default_rng(config.seed + 2).permutation(n)
        train_samples = [samples[i] for i in perm[:config.train_count]]
        ranking = feat.spearman_rank(train_samples, config.target_key,
                                     config.top_k)
        stats = feat.fit_normalization(train_samples, config.target_key)
        tensors = [feat.tensorize(s, grid, ranking, stats) for s in samples]
        train_ids, test_ids = feat.split_and_persist(
            tensors, config.train_count, config.seed + 2, out,
            grid=grid, ranking=ranking, stats=stats,
            meta={"config_hash": config.config_hash(),
                  "target_key": config.target_key},
        )
        expected = [samples[i].scenario_id for i in perm[:config.train_count]]
        if train_ids != expected:
            raise HarnessError(
                "split permutation drifted between ranking and persistence"
            )
        by_id = {t.scenario_id: t for t in tensors}
        train = [by_id[i] for i in train_ids]
        test = [by_id[i] for i in test_ids]
    except StageError:
        raise
    except Exception as exc:
        raise StageError("tensorize", str(exc), out) from exc
    log.info("tensorize: %d train / %d test, channels %s",
             len(train), len(test), ranking.selected)
    return train, test, ranking, stats


def _model_paths(config: PipelineConfig, name: str):
    models = _ws(config) / "models"
    if name == "mean":
        return models / "mean.json", None
    return models / f"{name}.ckpt", models / f"{name}_loss.csv"


def stage_train(config: PipelineConfig, name: str, train_tensors,
                stats: feat.NormalizationStats):
    """Fit one model on the training tensors and persist it."""
    ckpt, loss_path = _model_paths(config, name)
    try:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        if name == "mean":
            model = MeanBaseline(
                mean_hz=float(np.mean([t.target_hz for t in train_tensors])),
                n_train=len(train_tensors),
            )
            with open(ckpt, "w", encoding="utf-8") as fh:
                json.dump({"mean_hz": model.mean_hz,
                           "n_train": model.n_train},
                          fh, indent=1, sort_keys=True)
                fh.write("\n")
            return model
        if name == "cnn":
            model = nn.build_nadir_cnn(config.grid_h, config.top_k,
                                       seed=config.seed + 3)
        else:
            model = nn.build_mlp(config.grid_h, config.top_k,
                                 seed=config.seed + 3)
        model.set_target_scale(stats.target_min, stats.target_max)
        X = np.stack([t.tensor for t in train_tensors])
        y = np.array([t.target for t in train_tensors])
        trace = nn.train(model, X, y,
                         replace(config.training, seed=config.seed + 3))
        nn.save_checkpoint(model, ckpt)
        with open(loss_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_half_squared_error"])
            for epoch, value in enumerate(trace):
                writer.writerow([epoch, repr(float(value))])
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train", f"model {name}: {exc}", ckpt) from exc
    log.info("train[%s]: loss %.3g -> %.3g over %d epochs",
             name, trace[0], trace[-1], trace.size)
    return model


def load_model(config: PipelineConfig, name: str):
    """Read a previously trained model back from the workspace."""
    ckpt, _ = _model_paths(config, name)
    try:
        if name == "mean":
            with open(ckpt, encoding="utf-8") as fh:
                d = json.load(fh)
            return MeanBaseline(mean_hz=d["mean_hz"], n_train=d["n_train"])
        return nn.load_checkpoint(ckpt)
    except Exception as exc:
        raise StageError("train", f"cannot load model {name}: {exc}",
                         ckpt) from exc


def predict_hz(model, tensor: np.ndarray) -> float:
    """Scalar frequency prediction in Hz from either model kind."""
    if isinstance(model, MeanBaseline):
        return model.mean_hz
    return nn.predict(model, tensor)


def stage_evaluate(config: PipelineConfig, models: dict, test_tensors):
    """Score every model on the fixed test split; write ``report.csv``,
    ``predictions.csv`` and a predicted-vs-actual scatter per model."""
    ws = _ws(config)
    out = ws / "reports"
    try:
        out.mkdir(parents=True, exist_ok=True)
        actuals = np.array([t.target_hz for t in test_tensors])
        ids = np.array([t.scenario_id for t in test_tensors])
        reports = {}
        for name, model in models.items():
            preds = np.array([predict_hz(model, t.tensor)
                              for t in test_tensors])
            reports[name] = evaluate_metrics(preds, actuals, ids, model=name)
            _scatter_svg(out / f"scatter_{name}.svg", actuals, preds, name)
        _write_report_csv(out / "report.csv", config, reports)
        _write_predictions_csv(out / "predictions.csv", reports)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", str(exc), out) from exc
    for name, rep in reports.items():
        log.info("evaluate[%s]: MAE %.4f Hz, RMSE %.4f Hz",
                 name, rep.mae_hz, rep.rmse_hz)
    return reports


def _write_report_csv(path, config: PipelineConfig, reports: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "kind", "n_test", "mae_hz", "mape",
                         "rmse_hz", "target", "config_hash", "seed"])
        for name in sorted(reports):
            rep = reports[name]
            writer.writerow([
                name, "measured", rep.n_test, repr(rep.mae_hz),
                repr(rep.mape), repr(rep.rmse_hz), config.target_key,
                config.config_hash(), config.seed,
            ])
        writer.writerow([
            "cnn-published-reference", "reference", "",
            repr(REFERENCE_CNN["mae_hz"]), repr(REFERENCE_CNN["mape"]),
            repr(REFERENCE_CNN["rmse_hz"]), "nadir_hz",
            config.config_hash(), config.seed,
        ])


def _write_predictions_csv(path, reports: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "scenario_id", "actual_hz", "predicted_hz",
                         "abs_err_hz", "ape_pred", "ape_actual"])
        for name in sorted(reports):
            for row in reports[name].rows:
                writer.writerow([
                    name, row["scenario_id"], repr(row["actual_hz"]),
                    repr(row["predicted_hz"]), repr(row["abs_err_hz"]),
                    repr(row["ape_pred"]), repr(row["ape_actual"]),
                ])


def _scatter_svg(path, actuals, preds, label: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "freqcast"
    fig, ax = plt.subplots(figsize=(5, 5))
    lo = min(actuals.min(), preds.min())
    hi = max(actuals.max(), preds.max())
    pad = 0.05 * (hi - lo) if hi > lo else 0.1
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad],
            color="0.6", lw=1, ls="--", zorder=1)
    ax.scatter(actuals, preds, s=18, c="tab:red", zorder=2)
    ax.set_xlabel("actual nadir [Hz]")
    ax.set_ylabel("predicted nadir [Hz]")
    ax.set_title(f"{label}: predicted vs actual")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_learning_curve(config: PipelineConfig,
                       sizes=(50, 100, 200, 220),
                       models=None):
    """Retrain each model on nested training subsets and score all of them
    on the one fixed test split. Returns the rows and writes
    ``reports/learning_curve.csv`` plus an SVG."""
    ws = _ws(config)
    out = ws / "reports"
    if models is None:
        models = config.models
    try:
        train, test, manifest = feat.load_tensor_dataset(ws / "tensors")
        stats = feat.NormalizationStats.from_dict(manifest["stats"])
        sizes = tuple(int(s) for s in sizes)
        bad = [s for s in sizes if not 1 <= s <= len(train)]
        if bad:
            raise HarnessError(
                f"sizes {bad} infeasible for {len(train)} training samples"
            )
        rows = []
        for name in models:
            for size in sizes:
                subset = train[:size]  # nested by list-prefix construction
                model = stage_train(config, name, subset, stats)
                actuals = np.array([t.target_hz for t in test])
                preds = np.array([predict_hz(model, t.tensor) for t in test])
                rep = evaluate_metrics(
                    preds, actuals,
                    [t.scenario_id for t in test], model=name,
                )
                rows.append({"model": name, "train_size": size,
                             "mae_hz": rep.mae_hz, "rmse_hz": rep.rmse_hz,
                             "mape": rep.mape})
                log.info("learning-curve[%s, %d]: MAE %.4f Hz",
                         name, size, rep.mae_hz)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "learning_curve.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "train_size", "mae_hz", "rmse_hz",
                             "mape", "config_hash", "seed"])
            for row in rows:
                writer.writerow([
                    row["model"], row["train_size"], repr(row["mae_hz"]),
                    repr(row["rmse_hz"]), repr(row["mape"]),
                    config.config_hash(), config.seed,
                ])
        _learning_curve_svg(out / "learning_curve.svg", rows)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("learning-curve", str(exc), out) from exc
    return rows


def _learning_curve_svg(path, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "freqcast"
    fig, ax = plt.subplots(figsize=(6, 4))
    by_model: dict = {}
    for row in rows:
        by_model.setdefault(row["model"], []).append(
            (row["train_size"], row["mae_hz"])
        )
    for name, pts in sorted(by_model.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker="o", label=name)
    ax.set_xlabel("training samples")
    ax.set_ylabel("test MAE [Hz]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def end_to_end(config: PipelineConfig) -> dict:
    """Run the whole chain and return the evaluation reports per model."""
    _write_config(config)
    timings = {}

    t0 = time.perf_counter()
    results, _ = stage_simulate(config)
    timings["simulate_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid, _ = stage_embed(config)
    timings["embed_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train, test, ranking, stats = stage_tensorize(config, results, grid)
    timings["tensorize_s"] = time.perf_counter() - t0

    models = {}
    for name in config.models:
        t0 = time.perf_counter()
        models[name] = stage_train(config, name, train, stats)
        timings[f"train_{name}_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reports = stage_evaluate(config, models, test)
    timings["evaluate_s"] = time.perf_counter() - t0

    with open(_ws(config) / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(timings, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return reports
