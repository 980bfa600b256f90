"""A miniature end-to-end adaptation run with metrics and an SVG chart.

Run: python3 demos/05_training_run.py   (takes ~1 minute)
"""

import tempfile
from pathlib import Path

from copt.config import TrainConfig
from copt.data_synth import SceneConfig, write_dataset
from copt.svgplot import plot_csv
from copt.train import evaluate_checkpoint, train

work = Path(tempfile.mkdtemp(prefix="copt_demo_"))
print(f"working in {work}")

ds = work / "dataset"
write_dataset(SceneConfig(seed=0), n_source=48, n_target=60, out_dir=ds)
print("dataset: 48 labeled source + 60 unlabeled target samples (64x64, 5 classes)")

cfg = TrainConfig(
    seed=1, iterations=400, eval_every=100, eval_count=16,
    dataset_dir=str(ds), out_dir=str(work / "run"),
    selftrain_start=100, mask_block=8, mask_ratio=0.5, tau=0.9,
    ema_alpha=0.995, strongaug_enabled=False,
)
print("training: source CE + covariance pixel-text loss + masked self-training ...")
result = train(cfg)
print(f"final target mIoU {result.final_miou:.4f}")

report, it = evaluate_checkpoint(result.checkpoint_path, ds, "target")
print(f"re-evaluated checkpoint at iteration {it}: mIoU {report.miou:.4f}")
print("per-class IoU:", [f"{v:.3f}" for v in report.per_class])

svg = plot_csv(result.metrics_path, work / "run.svg")
print(f"\nmetrics: {result.metrics_path}")
print(f"chart:   {svg}")
