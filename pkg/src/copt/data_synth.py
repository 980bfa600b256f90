"""Procedural two-domain segmentation benchmark.

Scenes are 2-4 simple shapes (disk, square, triangle, bar) on a background.
Geometry is drawn with integer arithmetic from a counter-based stream keyed by
(seed, index) - never by domain when `paired` is on - so a source image and
its target twin share the exact same mask and the gap between domains is
purely photometric: the source paints flat palette colors modulated by a
checker texture, the target paints a hue-rotated palette with a brightness
offset and additive Gaussian noise.

On-disk layout: `manifest.txt` with one "id domain" line per sample, plus
img_<id>.ntf / lbl_<id>.ntf tensor files. NTF is magic "NTF1" | u8 dtype
(0=f32, 1=u8) | u8 rank | rank x u32 LE dims | row-major payload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import FormatError, ValidationError
from .tensor import Tensor

NTF_MAGIC = b"NTF1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}

CLASS_NAMES = ("background", "disk", "square", "triangle", "bar")

# background / disk / square / triangle / bar base colors
_PALETTE = np.array(
    [
        [0.20, 0.22, 0.27],
        [0.75, 0.20, 0.18],
        [0.18, 0.62, 0.25],
        [0.18, 0.30, 0.75],
        [0.80, 0.70, 0.15],
    ],
    dtype=np.float32,
)


@dataclass
class SceneConfig:
    n_classes: int = 5
    height: int = 64
    width: int = 64
    seed: int = 0
    paired: bool = True
    # photometric gap knobs (target domain); the defaults sit where a
    # source-only model transfers at roughly two thirds of its source score,
    # so adaptation has both signal and headroom
    hue_angle: float = 0.55     # radians around the gray axis
    noise_sigma: float = 0.05
    brightness: float = 0.08
    # source texture
    texture_amp: float = 0.15
    checker: int = 4

    def __post_init__(self):
        if not 2 <= self.n_classes <= 5:
            raise ValidationError(f"n_classes must be in [2,5], got {self.n_classes}")
        if self.height % 2 or self.width % 2:
            raise ValidationError("height/width must be even")

    def class_names(self) -> tuple[str, ...]:
        return CLASS_NAMES[: self.n_classes]


@dataclass
class SampleRecord:
    id: str
    image: Tensor          # [3,H,W] in [0,1]
    mask: np.ndarray       # [H,W] u8, 255 = ignore
    domain: str            # "source" | "target"


def _rasterize_shape(mask: np.ndarray, kind: int, top: int, left: int, size: int, variant: int) -> None:
    h, w = mask.shape
    ii, jj = np.mgrid[0:h, 0:w]
    if kind == 1:  # disk; doubled-coordinate circle test keeps it integral
        di = 2 * (ii - top) - (size - 1)
        dj = 2 * (jj - left) - (size - 1)
        mask[di * di + dj * dj <= size * size] = kind
    elif kind == 2:  # square
        mask[top:top + size, left:left + size] = kind
    elif kind == 3:  # upward isoceles triangle
        t = ii - top
        halfw = (t * (size // 2)) // max(size - 1, 1)
        inside = (t >= 0) & (t < size) & (np.abs(2 * (jj - left) - (size - 1)) <= 2 * halfw)
        mask[inside] = kind
    elif kind == 4:  # bar: thin rectangle, horizontal or vertical
        thick = max(size // 4, 3)
        if variant % 2 == 0:
            mask[top:top + thick, left:left + size] = kind
        else:
            mask[top:top + size, left:left + thick] = kind
    else:
        raise ValidationError(f"unknown shape kind {kind}")


def _hue_rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    k = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]], dtype=np.float64) / math.sqrt(3.0)
    j = np.full((3, 3), 1.0 / 3.0)
    return (c * np.eye(3) + s * k + (1 - c) * j).astype(np.float32)


def generate_sample(cfg: SceneConfig, domain: str, index: int) -> SampleRecord:
    """Deterministic in (seed, domain, index); geometry ignores the domain when
    cfg.paired so matched indices share a mask across domains."""
    if domain not in ("source", "target"):
        raise ValidationError(f"domain must be source|target, got {domain!r}")
    geom_key = (cfg.seed, "geom", index) if cfg.paired else (cfg.seed, "geom", domain, index)
    geom = rng.stream(*geom_key)

    h, w, c = cfg.height, cfg.width, cfg.n_classes
    mask = np.zeros((h, w), dtype=np.uint8)
    n_shapes = int(geom.integers(2, 5))
    max_size = min(28, h - 2, w - 2)
    for _ in range(n_shapes):
        kind = int(geom.integers(1, c))
        size = int(geom.integers(8, max_size + 1))
        top = int(geom.integers(0, h - size + 1))
        left = int(geom.integers(0, w - size + 1))
        variant = int(geom.integers(0, 2))
        _rasterize_shape(mask, kind, top, left, size, variant)

    if domain == "source":
        img = _PALETTE[mask].transpose(2, 0, 1).copy()
        blocks = (np.add.outer(np.arange(h) // cfg.checker, np.arange(w) // cfg.checker)) % 2
        tex = np.where(blocks == 0, 1.0 + cfg.texture_amp, 1.0 - cfg.texture_amp).astype(np.float32)
        img *= tex[None, :, :]
    else:
        palette = np.clip(_PALETTE @ _hue_rotation(cfg.hue_angle).T + cfg.brightness, 0.0, 1.0)
        img = palette[mask].transpose(2, 0, 1).astype(np.float32).copy()
        style = rng.stream(cfg.seed, "style", domain, index)
        img += (style.standard_normal(img.shape) * cfg.noise_sigma).astype(np.float32)

    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return SampleRecord(id=f"{domain}_{index:05d}", image=Tensor(img), mask=mask, domain=domain)


# ---------------------------------------------------------------------------
# NTF tensor files and the dataset directory


def write_ntf(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dt = np.dtype("<f4") if arr.dtype.kind == "f" else np.dtype("u1")
    arr = arr.astype(dt)
    with open(path, "wb") as fh:
        fh.write(NTF_MAGIC)
        fh.write(bytes([_DTYPE_CODES[dt], arr.ndim]))
        for dim in arr.shape:
            fh.write(int(dim).to_bytes(4, "little"))
        fh.write(arr.tobytes())


def read_ntf(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != NTF_MAGIC:
        raise FormatError(f"{path}: bad magic, not an NTF file", offset=0)
    code, rank = take(2, "dtype/rank")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}", offset=4)
    dims = tuple(int.from_bytes(take(4, f"dim {i}"), "little") for i in range(rank))
    dt = _DTYPES[code]
    payload = take(int(np.prod(dims, dtype=np.int64)) * dt.itemsize, "payload")
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes", offset=off)
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


class Dataset:
    """Manifest-backed lazy access to a generated dataset directory."""

    def __init__(self, root: Path, entries: list[tuple[str, str]]):
        self.root = Path(root)
        self.entries = entries
        self.ids = [e[0] for e in entries]
        self.domains = {e[0]: e[1] for e in entries}

    def split(self, domain: str) -> list[str]:
        return [i for i, d in self.entries if d == domain]

    @property
    def source_ids(self) -> list[str]:
        return self.split("source")

    @property
    def target_ids(self) -> list[str]:
        return self.split("target")

    def load(self, sample_id: str) -> SampleRecord:
        if sample_id not in self.domains:
            raise FormatError(f"unknown sample id {sample_id!r}")
        img = read_ntf(self.root / f"img_{sample_id}.ntf")
        lbl = read_ntf(self.root / f"lbl_{sample_id}.ntf")
        return SampleRecord(
            id=sample_id,
            image=Tensor(img),
            mask=lbl,
            domain=self.domains[sample_id],
        )


def write_dataset(cfg: SceneConfig, n_source: int, n_target: int, out_dir: str | Path) -> Dataset:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, str]] = []
    for domain, n in (("source", n_source), ("target", n_target)):
        for i in range(n):
            rec = generate_sample(cfg, domain, i)
            write_ntf(out / f"img_{rec.id}.ntf", rec.image.data)
            write_ntf(out / f"lbl_{rec.id}.ntf", rec.mask)
            entries.append((rec.id, domain))
    with open(out / "manifest.txt", "w", encoding="utf-8") as fh:
        for sid, domain in entries:
            fh.write(f"{sid} {domain}\n")
    return Dataset(out, entries)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"{manifest}: missing manifest")
    entries: list[tuple[str, str]] = []
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("source", "target"):
            raise FormatError(f"{manifest}:{line_no}: bad manifest line {line!r}")
        entries.append((parts[0], parts[1]))
    for sid, _ in entries:
        for prefix in ("img", "lbl"):
            p = root / f"{prefix}_{sid}.ntf"
            if not p.exists():
                raise FormatError(f"manifest references {sid!r} but {p.name} is missing")
    return Dataset(root, entries)
