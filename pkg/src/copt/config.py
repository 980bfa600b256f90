"""Flat key=value run configuration.

Every field of TrainConfig maps to one line of the config file; command-line
flags override file values, and the fully resolved config is echoed next to
the run outputs so any result can be reproduced from its directory alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class TrainConfig:
    # run
    seed: int = 0
    iterations: int = 2000
    batch_size: int = 4
    eval_every: int = 200
    eval_count: int = 32
    dataset_dir: str = ""
    out_dir: str = ""
    scheme: str = "joint"            # joint | finetune
    init_from: str = ""              # checkpoint to start from (finetune)
    # optimizer
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    # model
    n_classes: int = 5
    class_names: str = "background,disk,square,triangle,bar"
    feat_dim: int = 32
    downsample_r: int = 4
    ignore_index: int = 255
    # covariance pixel-text loss
    copt_enabled: bool = True
    copt_weight: float = 1.0
    copt_metric: str = "cosine"      # cosine | l1 | l2
    copt_features_from: str = "source"  # source | target | both_sequential
    membank_decay: float = 0.5
    min_pixels: int = 1
    downsample_policy: str = "nearest"  # nearest | majority
    normalization: str = "total"        # total | count
    # text embeddings
    template_mode: str = "llm"       # llm | handcrafted
    source_template: str = "synthetic"
    target_template: str = "real"
    embedder: str = "hash"           # "hash" or a path to a .ctef file
    embed_dim: int = 512
    # self-training
    masked_enabled: bool = True
    strongaug_enabled: bool = True
    tau: float = 0.968
    mask_block: int = 32
    mask_ratio: float = 0.7
    ema_alpha: float = 0.999
    st_quality_weight: bool = True
    # iterations of source-only warmup before pseudo-label losses engage; the
    # desk-scale stand-in for starting from pretrained features
    selftrain_start: int = 0
    # iteration at which the teacher is re-seeded as an exact student copy
    # before the slow EMA proceeds; 0 keeps the teacher an EMA of everything
    # including the random init
    ema_start: int = 0

    def classes(self) -> tuple[str, ...]:
        names = tuple(n.strip() for n in self.class_names.split(",") if n.strip())
        if len(names) != self.n_classes:
            raise ConfigError(f"class_names lists {len(names)} names but n_classes={self.n_classes}")
        return names

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1 or self.iterations % self.eval_every:
            raise ConfigError(
                f"eval_every ({self.eval_every}) must divide iterations ({self.iterations}); "
                "checkpoints and CSV rows sit on eval boundaries"
            )
        if self.scheme not in ("joint", "finetune"):
            raise ConfigError(f"scheme must be joint|finetune, got {self.scheme!r}")
        if self.scheme == "finetune" and not self.init_from:
            raise ConfigError("scheme=finetune requires init_from")
        if self.copt_metric not in ("cosine", "l1", "l2"):
            raise ConfigError(f"bad copt_metric {self.copt_metric!r}")
        if self.copt_features_from not in ("source", "target", "both_sequential"):
            raise ConfigError(f"bad copt_features_from {self.copt_features_from!r}")
        if not 0.0 <= self.membank_decay <= 1.0:
            raise ConfigError("membank_decay must be in [0,1]")
        if self.template_mode not in ("llm", "handcrafted"):
            raise ConfigError(f"bad template_mode {self.template_mode!r}")
        if self.downsample_policy not in ("nearest", "majority"):
            raise ConfigError(f"bad downsample_policy {self.downsample_policy!r}")
        if self.normalization not in ("total", "count"):
            raise ConfigError(f"bad normalization {self.normalization!r}")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must be in [0,1]")
        self.classes()


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS[name]
    raw = raw.strip()
    if f.type == "bool" or isinstance(f.default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected true/false, got {raw!r}")
    if isinstance(f.default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected int, got {raw!r}") from None
    if isinstance(f.default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected float, got {raw!r}") from None
    return raw


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, value))
    return cfg


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def config_text(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    cfg = dataclasses.replace(cfg)
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg
