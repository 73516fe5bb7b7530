"""A small end-to-end run: simulate, embed, tensorize, train, evaluate.

Uses a reduced scenario count and epoch budget so it finishes in about a
minute; the acceptance suite runs the full-scale version. All artifacts
land in demos/out/pipeline and every stage is reproducible from the seed in
the saved config.json.
"""

import json
from pathlib import Path

from freqcast.harness import PipelineConfig, end_to_end
from freqcast.nn import TrainConfig

ws = Path(__file__).parent / "out" / "pipeline"

config = PipelineConfig(
    network="ieee39",
    workspace=str(ws),
    scenario_count=60,
    seed=0,
    horizon=40.0,
    grid_h=16,
    top_k=4,
    train_count=45,
    models=("cnn", "mean"),
    training=TrainConfig(learning_rate=1e-3, epochs=60, batch_size=8),
)
print(f"experiment {config.config_hash()} -> {ws}")

reports = end_to_end(config)

print("\ntest-set accuracy (15 held-out scenarios):")
for name, rep in sorted(reports.items()):
    print(f"  {name:5s} MAE {rep.mae_hz:.4f} Hz   RMSE {rep.rmse_hz:.4f} Hz"
          f"   MAPE {rep.mape:.2e}")

timings = json.loads((ws / "timings.json").read_text())
print("\nstage wall times (s):")
for stage, seconds in timings.items():
    print(f"  {stage:10s} {seconds:7.2f}")
print(f"\nreports and plots under {ws / 'reports'}")
