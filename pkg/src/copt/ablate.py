"""Ablation grids: one short training run per axis value, one comparison CSV.

Axes mirror the configuration surface worth sweeping: the covariance distance
metric, the memory-bank decay, which domain supplies pixel features, and the
template mode. No ordering is asserted at desk scale; the harness only
records the numbers.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import TrainConfig
from .errors import ConfigError
from .metrics import fmt6
from .train import train

AXES: dict[str, list[tuple[str, dict]]] = {
    "metric": [
        ("cosine", {"copt_metric": "cosine"}),
        ("l1", {"copt_metric": "l1"}),
        ("l2", {"copt_metric": "l2"}),
    ],
    "membank": [
        ("0.01", {"membank_decay": 0.01}),
        ("0.1", {"membank_decay": 0.1}),
        ("0.5", {"membank_decay": 0.5}),
    ],
    "features_from": [
        ("source", {"copt_features_from": "source"}),
        ("target", {"copt_features_from": "target"}),
        ("both_sequential", {"copt_features_from": "both_sequential"}),
    ],
    "template": [
        ("handcrafted", {"template_mode": "handcrafted"}),
        ("llm", {"template_mode": "llm"}),
    ],
}


def run_ablation(axis: str, base: TrainConfig, out_dir: str | Path) -> Path:
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["axis,value,final_miou,iterations,run_dir"]
    for label, overrides in AXES[axis]:
        cfg = dataclasses.replace(base, **overrides, copt_enabled=True,
                                  out_dir=str(out / f"{axis}_{label}"))
        result = train(cfg)
        rows.append(f"{axis},{label},{fmt6(result.final_miou)},{result.iterations},{result.out_dir}")
    csv_path = out / f"ablation_{axis}.csv"
    csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return csv_path
