"""Covariance pixel-text alignment loss.

Pairwise cosine similarities of the per-class pixel features form one matrix,
the same similarities over the frozen per-class text embeddings form another,
and the loss is a distance between the two (cosine of the flattened matrices
by default; L1/L2 variants for comparison). Driving the pixel matrix toward
the text matrix asks the encoder to arrange its class features with the same
relative geometry the domain-agnostic text space has.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateBatchError, ValidationError
from .pixel_features import FeatureMemoryBank, extract_present_features
from .tensor import Tensor, cosine_similarity, reshape, stack_scalars, tmean, absval, sub, mul, scale, shift
from .text_embed import TextBank, text_covariance

METRICS = ("cosine", "l1", "l2")


@dataclass
class CoptConfig:
    metric: str = "cosine"
    weight: float = 1.0
    features_from: str = "source"  # source | target | both_sequential
    enabled: bool = True

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.features_from not in ("source", "target", "both_sequential"):
            raise ValidationError(f"bad features_from {self.features_from!r}")
        if self.weight < 0:
            raise ValidationError(f"weight must be >= 0, got {self.weight}")


@dataclass
class CovarianceMatrix:
    """Pairwise-similarity matrix over an ordered subset of classes.

    `values` is an [m,m] tensor; for pixel features it is differentiable, for
    text embeddings it is a constant.
    """

    class_ids: tuple[int, ...]
    values: Tensor

    @property
    def m(self) -> int:
        return len(self.class_ids)

    def numpy(self) -> np.ndarray:
        return self.values.data


def pixel_covariance(features: list[tuple[int, Tensor]]) -> CovarianceMatrix:
    """Cosine similarity between every pair of class pixel features.

    Each upper-triangle entry is computed once and mirrored, so the matrix is
    exactly symmetric and gradients flow through both positions of a pair.
    """
    if len(features) < 2:
        raise DegenerateBatchError(f"pixel covariance needs >= 2 classes, got {len(features)}")
    ids = tuple(c for c, _ in features)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate class ids {ids}")
    m = len(features)
    cells: dict[tuple[int, int], Tensor] = {}
    for i in range(m):
        for j in range(i, m):
            cells[(i, j)] = cosine_similarity(features[i][1], features[j][1])
    flat = [cells[(i, j)] if i <= j else cells[(j, i)] for i in range(m) for j in range(m)]
    return CovarianceMatrix(ids, reshape(stack_scalars(flat), (m, m)))


def covariance_from_array(class_ids, values: np.ndarray) -> CovarianceMatrix:
    """Wrap a precomputed (constant) similarity matrix."""
    return CovarianceMatrix(tuple(class_ids), Tensor(values))


def copt(cov_p: CovarianceMatrix, cov_t: CovarianceMatrix, metric: str = "cosine") -> Tensor:
    """Distance between the pixel and text covariance matrices.

    cosine: one minus the cosine of the flattened matrices; l1/l2: mean
    absolute / mean squared entry difference. Differentiable through cov_p.
    """
    if cov_p.class_ids != cov_t.class_ids:
        raise ContractError(f"class id mismatch: {cov_p.class_ids} vs {cov_t.class_ids}")
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")
    m = cov_p.m
    vec_p = reshape(cov_p.values, (m * m,))
    vec_t = reshape(cov_t.values, (m * m,))
    if metric == "cosine":
        return shift(scale(cosine_similarity(vec_p, vec_t), -1.0), 1.0)
    diff = sub(vec_p, vec_t)
    if metric == "l1":
        return tmean(absval(diff))
    return tmean(mul(diff, diff))


@dataclass
class CoptStepResult:
    loss: Tensor | None
    present: tuple[int, ...]

    @property
    def skipped(self) -> bool:
        return self.loss is None


def copt_step(
    f_map: Tensor,
    y_small: np.ndarray,
    bank: FeatureMemoryBank | None,
    text_bank: TextBank,
    cfg: CoptConfig,
    min_pixels: int = 1,
    normalization: str = "total",
    ignore_index: int = 255,
) -> CoptStepResult:
    """Full per-sample pipeline: pool class features, update the bank, build
    both covariance matrices over the present classes, and measure their
    distance. Returns a skip marker when fewer than two classes are present
    (or when disabled)."""
    if not cfg.enabled:
        return CoptStepResult(loss=None, present=())
    feats = extract_present_features(
        f_map, y_small, bank, min_pixels=min_pixels,
        normalization=normalization, ignore_index=ignore_index,
    )
    if len(feats) < 2:
        return CoptStepResult(loss=None, present=tuple(c for c, _ in feats))
    ids = [c for c, _ in feats]
    cov_p = pixel_covariance(feats)
    cov_t = covariance_from_array(ids, text_covariance(text_bank, ids))
    return CoptStepResult(loss=copt(cov_p, cov_t, cfg.metric), present=tuple(ids))
