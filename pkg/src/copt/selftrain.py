"""Self-training on unlabeled target images with an EMA teacher.

The teacher predicts a hard pseudo-label plus a quality score (the fraction of
pixels whose max softmax clears a confidence threshold). The student is then
trained to reproduce that pseudo-label from a corrupted view: either a
block-masked image or a strongly augmented one. Both consistency losses are
weighted by the quality score so that early, low-confidence teachers
contribute little.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .model import SegModel, forward
from .tensor import Tensor, argmax_channels, scale, softmax_channels, softmax_cross_entropy


@dataclass
class PseudoLabel:
    labels: np.ndarray  # [H,W] int
    quality: float      # fraction of confident pixels, in [0,1]


@dataclass
class MaskSpec:
    block_size: int = 32
    mask_ratio: float = 0.7
    fill_value: float = 0.0

    def __post_init__(self):
        if self.block_size < 1:
            raise ValidationError(f"block_size must be positive, got {self.block_size}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValidationError(f"mask_ratio must be in [0,1], got {self.mask_ratio}")


def pseudo_from_logits(logits: Tensor, tau: float) -> PseudoLabel:
    """Argmax labels plus the fraction of pixels with max softmax above tau."""
    probs = softmax_channels(logits)
    labels = argmax_channels(logits)
    max_prob = probs.data.max(axis=0)
    quality = float((max_prob > tau).mean())
    return PseudoLabel(labels=labels, quality=quality)


def pseudo_label(teacher: SegModel, x_t: Tensor, tau: float) -> PseudoLabel:
    """Pseudo-label an unlabeled image with the (gradient-free) teacher."""
    _, logits = forward(teacher, x_t)
    return pseudo_from_logits(logits, tau)


def mask_image(x_t: Tensor, spec: MaskSpec, gen: np.random.Generator) -> Tensor:
    """Zero out (fill) each block_size x block_size tile independently with
    probability mask_ratio."""
    _, h, w = x_t.shape
    b = spec.block_size
    if h % b or w % b:
        raise ShapeError(f"block size {b} does not divide image dims {(h, w)}")
    drop = gen.random((h // b, w // b)) < spec.mask_ratio
    keep = ~np.repeat(np.repeat(drop, b, axis=0), b, axis=1)
    data = np.where(keep, x_t.data, np.float32(spec.fill_value))
    return Tensor(data.astype(np.float32))


def masked_loss(student: SegModel, x_t: Tensor, pl: PseudoLabel, spec: MaskSpec,
                gen: np.random.Generator, ignore_index: int = 255) -> Tensor:
    """Quality-weighted cross entropy of the student on the masked image."""
    _, logits = forward(student, mask_image(x_t, spec, gen))
    return scale(softmax_cross_entropy(logits, pl.labels, ignore_index), pl.quality)


@dataclass
class Augmentation:
    image: Tensor
    flipped: bool


def strong_augment(x_t: Tensor, gen: np.random.Generator) -> Augmentation:
    """Flip / color jitter / box blur, each behind its own coin.

    All random draws happen up front in a fixed order, so the augmentation is
    a pure function of the stream regardless of which branches fire. The flip
    flag is returned so labels can be flipped to match.
    """
    u_flip = gen.random()
    u_jitter = gen.random()
    scales = gen.uniform(0.6, 1.4, size=3).astype(np.float32)
    shifts = gen.uniform(-0.2, 0.2, size=3).astype(np.float32)
    u_blur = gen.random()

    img = x_t.data
    flipped = bool(u_flip < 0.5)
    if flipped:
        img = img[:, :, ::-1]
    if u_jitter < 0.8:
        img = img * scales[:, None, None] + shifts[:, None, None]
    if u_blur < 0.5:
        img = _box_blur3(img)
    return Augmentation(image=Tensor(np.clip(img, 0.0, 1.0).astype(np.float32)), flipped=flipped)


def _box_blur3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(img, dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            acc += padded[:, di:di + img.shape[1], dj:dj + img.shape[2]]
    return (acc / 9.0).astype(np.float32)


def strongaug_loss(student: SegModel, x_t: Tensor, pl: PseudoLabel,
                   gen: np.random.Generator, quality_weight: bool = True,
                   ignore_index: int = 255) -> Tensor:
    """Cross entropy of the student on the augmented image vs geometry-matched
    pseudo-labels, optionally quality-weighted."""
    aug = strong_augment(x_t, gen)
    labels = pl.labels[:, ::-1] if aug.flipped else pl.labels
    _, logits = forward(student, aug.image)
    ce = softmax_cross_entropy(logits, np.ascontiguousarray(labels), ignore_index)
    return scale(ce, pl.quality) if quality_weight else ce
