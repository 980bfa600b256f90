"""Joint training loop: supervised source CE, covariance pixel-text
alignment, and the two self-training consistency losses, optimized by Adam
with an EMA teacher.

Determinism contract: single-threaded, every random draw keyed by
(seed, purpose, iteration), evaluation and checkpointing on fixed iteration
boundaries. Two runs with the same config produce byte-identical metrics
CSVs, and resuming from any checkpoint continues the same byte stream.

Batch semantics: each loss is the mean of per-sample terms over the batch.
The covariance loss runs per sample (memory-bank updates in ascending class
order within a sample, samples in batch order) and averages the non-skipped
samples; samples with fewer than two classes bump the skip counter and
contribute nothing. CSV loss columns are means over the window since the
previous eval row.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .checkpoint import (
    CheckpointData,
    apply_params,
    load_checkpoint,
    model_from_checkpoint,
    restore_adam,
    restore_bank,
    save_checkpoint,
)
from .config import TrainConfig, config_text
from .copt_loss import CoptConfig, copt_step
from .data_synth import SampleRecord, load_dataset
from .errors import ConfigError
from .metrics import ConfusionMatrix, IouReport, csv_header, csv_row, iou
from .model import SegModel, clone_params, ema_update, forward, init_model
from .optim import AdamState, adam_step
from .pixel_features import FeatureMemoryBank, downsample_mask
from .selftrain import MaskSpec, masked_loss, pseudo_label, strongaug_loss
from .tensor import Tape, Tensor, add, argmax_channels, scale, softmax_cross_entropy
from .text_embed import (
    ClassList,
    DomainTemplateSet,
    build_text_bank,
    builtin_template,
    hash_embedder,
    load_ctef,
)


class TrainingAborted(RuntimeError):
    def __init__(self, iteration: int, reason: str):
        super().__init__(f"training aborted at iteration {iteration}: {reason}")
        self.iteration = iteration


@dataclass
class TrainResult:
    out_dir: Path
    metrics_path: Path
    checkpoint_path: Path
    final_miou: float
    iterations: int


def resolve_template(name_or_path: str) -> DomainTemplateSet:
    if os.path.exists(name_or_path):
        return DomainTemplateSet.load(name_or_path)
    return builtin_template(name_or_path)


def make_provider(cfg: TrainConfig):
    if cfg.embedder == "hash":
        return hash_embedder(cfg.embed_dim)
    return load_ctef(cfg.embedder)


def evaluate_split(model: SegModel, samples: list[SampleRecord], n_classes: int,
                   ignore_index: int = 255) -> IouReport:
    """Plain student inference over a list of samples; no teacher, no tape."""
    cm = ConfusionMatrix(n_classes)
    for rec in samples:
        if int(rec.mask[rec.mask != ignore_index].max(initial=0)) >= n_classes:
            raise ConfigError(
                f"sample {rec.id} has labels >= {n_classes}; dataset does not match model"
            )
        _, logits = forward(model, rec.image)
        cm.accumulate(argmax_channels(logits), rec.mask, ignore_index)
    return iou(cm)


def evaluate_checkpoint(checkpoint_path: str | Path, dataset_dir: str | Path,
                        split: str = "target", ignore_index: int = 255) -> tuple[IouReport, int]:
    data = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(data)
    ds = load_dataset(dataset_dir)
    ids = ds.split(split)
    if not ids:
        raise ConfigError(f"dataset has no {split!r} samples")
    samples = [ds.load(sid) for sid in ids]
    return evaluate_split(model, samples, data.n_classes, ignore_index), data.iteration


def _mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(terms))


class Trainer:
    """Owns the mutable run state; `train()` below is the functional entry."""

    def __init__(self, cfg: TrainConfig, resume: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.classes = ClassList(cfg.classes())
        self.ds = load_dataset(cfg.dataset_dir)
        self.cache = {sid: self.ds.load(sid) for sid in self.ds.ids}

        src = self.ds.source_ids
        tgt = self.ds.target_ids
        if not src:
            raise ConfigError("dataset has no source samples")
        if cfg.eval_count < 1 or cfg.eval_count >= len(tgt):
            raise ConfigError(
                f"eval_count {cfg.eval_count} must leave at least one unlabeled "
                f"target sample (dataset has {len(tgt)})"
            )
        self.src_pool = src
        self.tgt_pool = tgt[: len(tgt) - cfg.eval_count]
        self.eval_ids = tgt[len(tgt) - cfg.eval_count:]

        provider = make_provider(cfg)
        self.text_bank = build_text_bank(
            provider,
            resolve_template(cfg.source_template),
            resolve_template(cfg.target_template),
            self.classes,
            cfg.template_mode,
        )
        self.student = init_model(cfg.seed, c=cfg.n_classes, d=cfg.feat_dim, r=cfg.downsample_r)
        self.teacher = clone_params(self.student)
        self.bank = FeatureMemoryBank(cfg.membank_decay, cfg.feat_dim)
        self.adam = AdamState.for_params(self.student.parameters())
        self.mask_spec = MaskSpec(block_size=cfg.mask_block, mask_ratio=cfg.mask_ratio)
        self.copt_cfg = CoptConfig(
            metric=cfg.copt_metric, weight=cfg.copt_weight,
            features_from=cfg.copt_features_from, enabled=cfg.copt_enabled,
        )

        self.out_dir = Path(cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.ckpt_path = self.out_dir / "checkpoint.ckpt"
        self.metrics_path = self.out_dir / "metrics.csv"

        self.start_iter = 0
        self.copt_skipped = 0
        if resume:
            self._resume()
        elif cfg.init_from:
            data = load_checkpoint(cfg.init_from)
            self._check_arch(data)
            apply_params(self.student, data.student)
            apply_params(self.teacher, data.teacher)

        (self.out_dir / "config.resolved").write_text(config_text(cfg), encoding="utf-8")
        if not resume:
            self.metrics_path.write_text(csv_header(self.classes.names) + "\n", encoding="utf-8")
        elif not self.metrics_path.exists():
            raise ConfigError(f"resume requested but {self.metrics_path} is missing")

    def _check_arch(self, data: CheckpointData) -> None:
        cfg = self.cfg
        if (data.n_classes, data.feat_dim, data.downsample_r) != (cfg.n_classes, cfg.feat_dim, cfg.downsample_r):
            raise ConfigError(
                f"checkpoint architecture (C={data.n_classes}, D={data.feat_dim}, r={data.downsample_r}) "
                f"does not match config (C={cfg.n_classes}, D={cfg.feat_dim}, r={cfg.downsample_r})"
            )

    def _resume(self) -> None:
        data = load_checkpoint(self.ckpt_path)
        self._check_arch(data)
        if data.seed != self.cfg.seed:
            raise ConfigError(f"checkpoint seed {data.seed} != config seed {self.cfg.seed}")
        apply_params(self.student, data.student)
        apply_params(self.teacher, data.teacher)
        restore_bank(self.bank, data)
        restore_adam(self.adam, data)
        self.start_iter = data.iteration
        self.copt_skipped = data.copt_skipped

    # --- one optimization pass -------------------------------------------

    def _optimize(self, loss: Tensor, tape: Tape) -> None:
        cfg = self.cfg
        tape.backward(loss)
        adam_step(
            self.student.parameters(), self.adam, lr=cfg.lr,
            beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay,
        )
        self.student.zero_grads()

    def _iteration(self, it: int) -> dict[str, float]:
        cfg = self.cfg
        bgen = rng.stream(cfg.seed, "batch", it)
        src_batch = [self.cache[self.src_pool[int(i)]]
                     for i in bgen.integers(0, len(self.src_pool), size=cfg.batch_size)]
        tgt_batch = [self.cache[self.tgt_pool[int(i)]]
                     for i in bgen.integers(0, len(self.tgt_pool), size=cfg.batch_size)]

        warmed_up = it > cfg.selftrain_start
        want_selftrain = (cfg.masked_enabled or cfg.strongaug_enabled) and warmed_up
        want_tgt_copt = cfg.copt_enabled and cfg.copt_features_from in ("target", "both_sequential") \
            and warmed_up
        want_src_copt = cfg.copt_enabled and cfg.copt_features_from in ("source", "both_sequential")

        pls = [pseudo_label(self.teacher, rec.image, cfg.tau) for rec in tgt_batch] \
            if (want_selftrain or want_tgt_copt) else []

        copt_vals: list[float] = []
        logged = {"ce": 0.0, "copt": 0.0, "m": 0.0, "st": 0.0}

        with Tape() as tape:
            ce_terms = []
            src_copt_terms = []
            for rec in src_batch:
                feats, logits = forward(self.student, rec.image)
                ce_terms.append(softmax_cross_entropy(logits, rec.mask, cfg.ignore_index))
                if want_src_copt:
                    y_small = downsample_mask(rec.mask, cfg.downsample_r, cfg.downsample_policy)
                    res = copt_step(
                        feats, y_small, self.bank, self.text_bank, self.copt_cfg,
                        min_pixels=cfg.min_pixels, normalization=cfg.normalization,
                        ignore_index=cfg.ignore_index,
                    )
                    if res.skipped:
                        self.copt_skipped += 1
                    else:
                        src_copt_terms.append(res.loss)

            tgt_copt_terms = []
            if cfg.copt_enabled and cfg.copt_features_from == "target":
                tgt_copt_terms = self._target_copt_terms(tgt_batch, pls)

            m_terms = []
            st_terms = []
            zero = Tensor(np.asarray(0.0, dtype=np.float32))
            for slot, (rec, pl) in enumerate(zip(tgt_batch, pls)):
                # a zero-quality pseudo-label weights its CE by exactly 0, so
                # the forward can be skipped without changing a single bit
                if cfg.masked_enabled:
                    m_terms.append(masked_loss(
                        self.student, rec.image, pl, self.mask_spec,
                        rng.stream(cfg.seed, "mask", it, slot), cfg.ignore_index,
                    ) if pl.quality > 0.0 else zero)
                if cfg.strongaug_enabled:
                    st_terms.append(strongaug_loss(
                        self.student, rec.image, pl,
                        rng.stream(cfg.seed, "aug", it, slot),
                        cfg.st_quality_weight, cfg.ignore_index,
                    ) if (pl.quality > 0.0 or not cfg.st_quality_weight) else zero)

            total = _mean(ce_terms)
            logged["ce"] = total.item()
            pass1_copt = src_copt_terms + tgt_copt_terms
            if pass1_copt:
                copt_mean = _mean(pass1_copt)
                copt_vals.append(copt_mean.item())
                total = add(total, scale(copt_mean, cfg.copt_weight))
            if m_terms:
                lm = _mean(m_terms)
                logged["m"] = lm.item()
                total = add(total, lm)
            if st_terms:
                lst = _mean(st_terms)
                logged["st"] = lst.item()
                total = add(total, lst)

            if not np.isfinite(total.data).all():
                raise TrainingAborted(it, "non-finite total loss")
            self._optimize(total, tape)

        if cfg.copt_enabled and cfg.copt_features_from == "both_sequential":
            # memory pressure in the original scheme forces a separate
            # backward/step for the target-feature pass
            with Tape() as tape2:
                terms = self._target_copt_terms(tgt_batch, pls)
                if terms:
                    mean2 = _mean(terms)
                    copt_vals.append(mean2.item())
                    self._optimize(scale(mean2, cfg.copt_weight), tape2)

        if it == cfg.ema_start:
            ema_update(self.teacher, self.student, 0.0)  # re-seed from the student
        else:
            ema_update(self.teacher, self.student, cfg.ema_alpha)
        if copt_vals:
            logged["copt"] = float(np.mean(copt_vals))
        return logged

    def _target_copt_terms(self, tgt_batch, pls) -> list[Tensor]:
        cfg = self.cfg
        terms = []
        for rec, pl in zip(tgt_batch, pls):
            feats, _ = forward(self.student, rec.image)
            y_small = downsample_mask(pl.labels, cfg.downsample_r, cfg.downsample_policy)
            res = copt_step(
                feats, y_small, self.bank, self.text_bank, self.copt_cfg,
                min_pixels=cfg.min_pixels, normalization=cfg.normalization,
                ignore_index=cfg.ignore_index,
            )
            if res.skipped:
                self.copt_skipped += 1
            else:
                terms.append(res.loss)
        return terms

    # --- schedule ----------------------------------------------------------

    def _save(self, iteration: int) -> None:
        save_checkpoint(self.ckpt_path, CheckpointData(
            iteration=iteration,
            seed=self.cfg.seed,
            n_classes=self.cfg.n_classes,
            feat_dim=self.cfg.feat_dim,
            downsample_r=self.cfg.downsample_r,
            copt_skipped=self.copt_skipped,
            student=[p.data for p in self.student.parameters()],
            teacher=[p.data for p in self.teacher.parameters()],
            bank=self.bank.snapshot(),
            adam_step=self.adam.step,
            adam_m=self.adam.m,
            adam_v=self.adam.v,
        ))

    def run(self) -> TrainResult:
        cfg = self.cfg
        window = {"ce": 0.0, "copt": 0.0, "m": 0.0, "st": 0.0}
        window_n = 0
        final_miou = float("nan")

        for it in range(self.start_iter + 1, cfg.iterations + 1):
            try:
                logged = self._iteration(it)
            except FloatingPointError as exc:
                raise TrainingAborted(it, str(exc)) from exc
            for k in window:
                window[k] += logged[k]
            window_n += 1

            if it % cfg.eval_every == 0:
                eval_samples = [self.cache[sid] for sid in self.eval_ids]
                report = evaluate_split(self.student, eval_samples, cfg.n_classes, cfg.ignore_index)
                means = {k: v / window_n for k, v in window.items()}
                with open(self.metrics_path, "a", encoding="utf-8") as fh:
                    fh.write(csv_row(it, "target", report, means, self.copt_skipped) + "\n")
                self._save(it)
                window = {k: 0.0 for k in window}
                window_n = 0
                final_miou = report.miou

        return TrainResult(
            out_dir=self.out_dir,
            metrics_path=self.metrics_path,
            checkpoint_path=self.ckpt_path,
            final_miou=final_miou,
            iterations=cfg.iterations,
        )


def train(cfg: TrainConfig, resume: bool = False) -> TrainResult:
    return Trainer(cfg, resume=resume).run()
