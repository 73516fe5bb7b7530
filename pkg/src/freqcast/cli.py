"""Command-line front end for the prediction pipeline.

    freqcast pipeline  --workspace ws            full chain
    freqcast simulate  --workspace ws            scenario generation only
    freqcast embed     --workspace ws            node layout + grid
    freqcast tensorize --workspace ws            feature tensors + split
    freqcast train     --workspace ws --model cnn
    freqcast predict   --workspace ws --model cnn
    freqcast evaluate  --workspace ws
    freqcast learning-curve --workspace ws --sizes 50,100,200,220

All subcommands accept --config <json> matching PipelineConfig plus
--seed/--workspace/--model overrides. Exit code 0 on success, 2 on a stage
failure (message names the stage), 1 on bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from freqcast import features as feat
from freqcast import harness


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqcast",
        description="Post-disturbance frequency nadir prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = [
        ("simulate", "generate and persist the scenario dataset"),
        ("embed", "compute the 2-D node layout and integer grid"),
        ("tensorize", "rank, normalize and rasterize features; split"),
        ("train", "fit the selected model(s) on the training split"),
        ("predict", "print test-split predictions for one model"),
        ("evaluate", "score trained models on the test split"),
        ("learning-curve", "retrain over nested training sizes"),
        ("pipeline", "run every stage in order"),
    ]
    for name, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON file mirroring PipelineConfig")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--workspace", type=Path, default=None,
                       help="override the workspace directory")
        p.add_argument("--model", choices=harness.MODEL_CHOICES, default=None,
                       help="restrict to one model")
        if name == "learning-curve":
            p.add_argument("--sizes", type=str, default="50,100,200,220",
                           help="comma-separated nested training sizes")
        if name == "predict":
            p.add_argument("--scenario", type=int, default=None,
                           help="predict a single scenario id")
    return parser


def _resolve_config(args) -> harness.PipelineConfig:
    if args.config is not None:
        config = harness.PipelineConfig.from_json(args.config)
    else:
        config = harness.PipelineConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.workspace is not None:
        config = replace(config, workspace=str(args.workspace))
    if args.model is not None:
        config = replace(config, models=(args.model,))
    return config


def _cmd_simulate(config, args) -> int:
    results, exclusions = harness.stage_simulate(config)
    print(f"kept {len(results)} scenarios, excluded {len(exclusions)} "
          f"-> {Path(config.workspace) / 'dataset'}")
    return 0


def _cmd_embed(config, args) -> int:
    grid, emb = harness.stage_embed(config)
    print(f"KL {emb.kl_initial:.4f} -> {emb.kl_final:.4f}, "
          f"{len(grid.relocations)} grid relocations "
          f"-> {Path(config.workspace) / 'embedding'}")
    return 0


def _cmd_tensorize(config, args) -> int:
    train, test, ranking, _ = harness.stage_tensorize(config)
    print(f"{len(train)} train / {len(test)} test tensors, channels: "
          f"{', '.join(ranking.selected)} "
          f"-> {Path(config.workspace) / 'tensors'}")
    return 0


def _cmd_train(config, args) -> int:
    ws = Path(config.workspace)
    train, _, manifest = feat.load_tensor_dataset(ws / "tensors")
    stats = feat.NormalizationStats.from_dict(manifest["stats"])
    for name in config.models:
        harness.stage_train(config, name, train, stats)
        ckpt, _ = harness._model_paths(config, name)
        print(f"trained {name} on {len(train)} samples -> {ckpt}")
    return 0


def _cmd_predict(config, args) -> int:
    ws = Path(config.workspace)
    _, test, _ = feat.load_tensor_dataset(ws / "tensors")
    name = config.models[0]
    model = harness.load_model(config, name)
    rows = [t for t in test
            if args.scenario is None or t.scenario_id == args.scenario]
    if not rows:
        print(f"no test scenario {args.scenario}", file=sys.stderr)
        return 1
    print("scenario_id,actual_hz,predicted_hz")
    for t in rows:
        pred = harness.predict_hz(model, t.tensor)
        print(f"{t.scenario_id},{t.target_hz!r},{pred!r}")
    return 0


def _cmd_evaluate(config, args) -> int:
    ws = Path(config.workspace)
    _, test, _ = feat.load_tensor_dataset(ws / "tensors")
    models = {name: harness.load_model(config, name)
              for name in config.models}
    reports = harness.stage_evaluate(config, models, test)
    _print_reports(reports)
    print(f"-> {ws / 'reports' / 'report.csv'}")
    return 0


def _cmd_learning_curve(config, args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(",") if s)
    rows = harness.run_learning_curve(config, sizes=sizes,
                                      models=config.models)
    print("model,train_size,mae_hz")
    for row in rows:
        print(f"{row['model']},{row['train_size']},{row['mae_hz']:.6f}")
    print(f"-> {Path(config.workspace) / 'reports' / 'learning_curve.csv'}")
    return 0


def _cmd_pipeline(config, args) -> int:
    reports = harness.end_to_end(config)
    _print_reports(reports)
    print(f"-> {Path(config.workspace) / 'reports' / 'report.csv'}")
    return 0


def _print_reports(reports) -> None:
    print("model,n_test,mae_hz,mape,rmse_hz")
    for name in sorted(reports):
        rep = reports[name]
        print(f"{name},{rep.n_test},{rep.mae_hz:.6f},"
              f"{rep.mape:.6e},{rep.rmse_hz:.6f}")


_HANDLERS = {
    "simulate": _cmd_simulate,
    "embed": _cmd_embed,
    "tensorize": _cmd_tensorize,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "learning-curve": _cmd_learning_curve,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        return _HANDLERS[args.command](config, args)
    except harness.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (harness.HarnessError, OSError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
