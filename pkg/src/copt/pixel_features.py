"""Per-class pixel features pooled from encoder maps, plus their memory bank.

The label mask is shrunk to the encoder's resolution, turned into per-class
binary masks, and each class's feature vector is the masked spatial average of
the feature map. Across iterations a decayed running average smooths the
per-batch noise in those vectors; gradients only flow through the current
batch's contribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor, scale, sum_spatial, mul

IGNORE_INDEX = 255


def downsample_mask(y: np.ndarray, r: int, policy: str = "nearest") -> np.ndarray:
    """Shrink an integer mask [H,W] by factor r.

    nearest: top-left pixel of each r x r block. majority: most frequent label
    in the block, ties to the smallest label id; the ignore label competes
    like any other.
    """
    y = np.asarray(y)
    if y.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got {y.shape}")
    h, w = y.shape
    if r < 1 or h % r or w % r:
        raise ShapeError(f"downsample factor {r} does not divide mask dims {(h, w)}")
    if r == 1:
        return y.copy()
    if policy == "nearest":
        return y[::r, ::r].copy()
    if policy == "majority":
        blocks = y.reshape(h // r, r, w // r, r).transpose(0, 2, 1, 3).reshape(h // r, w // r, r * r)
        out = np.empty((h // r, w // r), dtype=y.dtype)
        labels = np.unique(blocks)
        # vote count per candidate label; first (smallest) label wins ties
        counts = (blocks[..., None] == labels).sum(axis=2)
        out = labels[np.argmax(counts, axis=-1)]
        return out.astype(y.dtype)
    raise ValidationError(f"unknown downsample policy {policy!r}")


def class_binary_mask(y_small: np.ndarray, c: int) -> np.ndarray:
    """1.0 where the label equals c, else 0.0."""
    return (np.asarray(y_small) == c).astype(np.float32)


@dataclass
class ClassPixelFeature:
    class_id: int
    vector: Tensor
    pixel_count: int


def masked_spatial_average(f: Tensor, b: np.ndarray, normalization: str = "total") -> ClassPixelFeature:
    """Pool f[D,h,w] over the binary mask b[h,w] into a D-vector.

    total: divide by h*w (so the vector scales with the class's area);
    count: divide by the number of masked pixels. Differentiable w.r.t. f.
    An all-zero mask yields the zero vector with pixel_count 0.
    """
    if f.data.ndim != 3:
        raise ShapeError(f"features must be [D,h,w], got {f.shape}")
    b = np.asarray(b, dtype=np.float32)
    if b.shape != f.shape[1:]:
        raise ShapeError(f"mask {b.shape} does not match feature spatial dims {f.shape[1:]}")
    if normalization not in ("total", "count"):
        raise ValidationError(f"unknown normalization {normalization!r}")

    count = int(b.sum())
    h, w = b.shape
    denom = h * w if normalization == "total" else max(count, 1)
    tiled = Tensor(np.broadcast_to(b, f.shape).copy(), dtype=f.data.dtype)
    vec = scale(sum_spatial(mul(f, tiled)), 1.0 / denom)
    return ClassPixelFeature(class_id=-1, vector=vec, pixel_count=count)


class FeatureMemoryBank:
    """Per-class decayed average of pixel features.

    Stored values are plain numbers, never graph nodes: each update blends
    decay*stored + (1-decay)*incoming, detaches the result for storage, and
    returns a tensor whose gradient path is only the (1-decay)*incoming term.
    On first touch a class adopts the incoming value outright, unless
    `blend_from_zero` asks for the blend against a zero vector.
    """

    def __init__(self, decay: float, dim: int, blend_from_zero: bool = False):
        if not 0.0 <= decay <= 1.0:
            raise ValidationError(f"decay must be in [0,1], got {decay}")
        self.decay = float(decay)
        self.dim = int(dim)
        self.blend_from_zero = blend_from_zero
        self._store: dict[int, np.ndarray] = {}

    def initialized(self, c: int) -> bool:
        return c in self._store

    def stored(self, c: int) -> np.ndarray:
        return self._store[c].copy()

    def update(self, c: int, f_c: Tensor) -> Tensor:
        if f_c.data.shape != (self.dim,):
            raise ShapeError(f"bank expects vectors of dim {self.dim}, got {f_c.shape}")
        lam = self.decay
        if c not in self._store and not self.blend_from_zero:
            self._store[c] = f_c.data.astype(np.float32, copy=True)
            return f_c
        prev = self._store.get(c)
        prev_arr = prev if prev is not None else np.zeros(self.dim, dtype=np.float32)
        blended = shift_by_array(scale(f_c, 1.0 - lam), lam * prev_arr)
        self._store[c] = blended.data.astype(np.float32, copy=True)
        return blended

    def snapshot(self) -> dict[int, np.ndarray]:
        return {c: v.copy() for c, v in sorted(self._store.items())}

    def restore(self, snap: dict[int, np.ndarray]) -> None:
        self._store = {int(c): np.asarray(v, dtype=np.float32).copy() for c, v in snap.items()}


def shift_by_array(x: Tensor, offset: np.ndarray) -> Tensor:
    """x + constant array; the constant contributes no gradient."""
    if offset.shape != x.data.shape:
        raise ShapeError(f"offset {offset.shape} vs tensor {x.shape}")
    from .tensor import add

    return add(x, Tensor(offset, dtype=x.data.dtype))


def bank_update(bank: FeatureMemoryBank, c: int, f_c: Tensor) -> Tensor:
    return bank.update(c, f_c)


def extract_present_features(
    f: Tensor,
    y_small: np.ndarray,
    bank: FeatureMemoryBank | None,
    min_pixels: int = 1,
    normalization: str = "total",
    ignore_index: int = IGNORE_INDEX,
) -> list[tuple[int, Tensor]]:
    """Bank-smoothed feature vector for every class present in the mask.

    Classes are returned in ascending id order; the ignore label and classes
    with fewer than min_pixels pixels are dropped.
    """
    y_small = np.asarray(y_small)
    if y_small.shape != f.shape[1:]:
        raise ShapeError(f"mask {y_small.shape} does not match features {f.shape[1:]}")
    out: list[tuple[int, Tensor]] = []
    for c in sorted(int(v) for v in np.unique(y_small)):
        if c == ignore_index:
            continue
        pooled = masked_spatial_average(f, class_binary_mask(y_small, c), normalization)
        if pooled.pixel_count < min_pixels:
            continue
        vec = bank.update(c, pooled.vector) if bank is not None else pooled.vector
        out.append((c, vec))
    return out
