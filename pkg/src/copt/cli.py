"""Command-line entry points.

Subcommands: gen-data, embed-hash, train, eval, ablate, plot. Config files
are flat `key = value`; any key can also be overridden on the command line
with --set key=value.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ablate import AXES, run_ablation
from .config import TrainConfig, apply_overrides, load_config
from .data_synth import SceneConfig, write_dataset
from .errors import ConfigError, FormatError, ValidationError
from .metrics import csv_header, csv_row, fmt6
from .svgplot import plot_csv
from .text_embed import (
    ClassList,
    enumerate_prompts,
    hash_embedder,
    save_ctef,
)
from .train import TrainingAborted, evaluate_checkpoint, resolve_template, train


def _parse_set(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _load_cfg(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = _parse_set(args.set or [])
    if args.dataset_dir:
        overrides["dataset_dir"] = args.dataset_dir
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.iterations is not None:
        overrides["iterations"] = str(args.iterations)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return apply_overrides(cfg, overrides)


def cmd_gen_data(args) -> int:
    cfg = SceneConfig(
        n_classes=args.n_classes, height=args.height, width=args.width,
        seed=args.seed, paired=not args.unpaired, hue_angle=args.hue_angle,
        noise_sigma=args.noise_sigma, brightness=args.brightness,
    )
    ds = write_dataset(cfg, args.n_source, args.n_target, args.out)
    print(f"wrote {len(ds.source_ids)} source + {len(ds.target_ids)} target samples to {args.out}")
    return 0


def cmd_embed_hash(args) -> int:
    classes = ClassList(tuple(n.strip() for n in args.classes.split(",") if n.strip()))
    source = resolve_template(args.source_template)
    target = resolve_template(args.target_template)
    emb = hash_embedder(args.dim)
    prompts = enumerate_prompts(source, target, classes, args.mode)
    entries = [(p, emb(p)) for p in dict.fromkeys(prompts)]
    save_ctef(args.out, entries)
    print(f"wrote {len(entries)} embeddings (dim {args.dim}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    result = train(cfg, resume=args.resume)
    print(f"finished {result.iterations} iterations; final target mIoU {fmt6(result.final_miou)}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    report, iteration = evaluate_checkpoint(args.checkpoint, args.dataset_dir, args.split)
    names = [f"c{i}" for i in range(len(report.per_class))]
    print(csv_header(names))
    print(csv_row(iteration, args.split, report, {}, 0))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    csv_path = run_ablation(args.axis, cfg, args.out_dir or (Path(cfg.out_dir) / "ablation"))
    print(f"ablation table: {csv_path}")
    print(csv_path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_plot(args) -> int:
    out = args.out or str(Path(args.csv).with_suffix(".svg"))
    path = plot_csv(args.csv, out, tuple(args.columns.split(",")))
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copt",
        description="Desk-scale domain-adaptive segmentation with a covariance pixel-text loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-domain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-source", type=int, default=160)
    p.add_argument("--n-target", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-classes", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--hue-angle", type=float, default=SceneConfig.hue_angle)
    p.add_argument("--noise-sigma", type=float, default=SceneConfig.noise_sigma)
    p.add_argument("--brightness", type=float, default=SceneConfig.brightness)
    p.add_argument("--unpaired", action="store_true",
                   help="draw geometry independently per domain")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("embed-hash", help="write hash-embedder vectors for all prompts to a CTEF file")
    p.add_argument("--classes", default="background,disk,square,triangle,bar")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--mode", choices=("llm", "handcrafted"), default="llm")
    p.add_argument("--source-template", default="synthetic")
    p.add_argument("--target-template", default="real")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed_hash)

    for name, fn in (("train", cmd_train), ("ablate", cmd_ablate)):
        p = sub.add_parser(name, help=f"{name} using a config file plus overrides")
        p.add_argument("--config", default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--dataset-dir", default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "train":
            p.add_argument("--resume", action="store_true",
                           help="continue from the checkpoint in out_dir")
        else:
            p.add_argument("--axis", choices=sorted(AXES), required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--split", choices=("source", "target"), default="target")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render a metrics CSV as an SVG line chart")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    p.add_argument("--columns", default="miou,loss_ce,loss_copt,loss_m,loss_st")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, ValidationError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
