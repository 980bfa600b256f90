"""Per-class text embeddings that stay fixed across visual domains.

A class gets one prompt per domain attribute ("A car with natural colors and
lighting"), each prompt is embedded by a frozen text encoder, the per-domain
embeddings are averaged, and finally the source- and target-domain vectors are
blended 50/50. The resulting bank of per-class vectors is immutable and is
what the covariance alignment loss anchors pixel features to.

Two encoder backends exist:
  * `hash_embedder` - a dependency-free deterministic stand-in (FNV-1a keyed
    counter-based normals, unit norm), good enough to drive every test.
  * `load_ctef` - a table of real pretrained-encoder embeddings produced
    offline, keyed by exact prompt string (CTEF binary format below).

CTEF layout (little-endian): magic "CTE1" | u32 version=1 | u32 dim |
u32 entry_count | entries of (u32 name_len, name utf-8, dim float32).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng
from .errors import DegenerateBatchError, EmbeddingLookupError, FormatError, ValidationError

CTEF_MAGIC = b"CTE1"
CTEF_VERSION = 1

# An embedding provider maps a prompt string to a float32 vector and exposes
# its dimensionality via the `dim` attribute.
EmbedFn = Callable[[str], np.ndarray]


def format_handcrafted(domain: str, class_name: str) -> str:
    """Single short prompt naming the domain and the class."""
    if not domain or not class_name:
        raise ValidationError("format_handcrafted: domain and class must be non-empty")
    return f"A {domain} of a {class_name}"


def format_llm(class_name: str, attribute: str) -> str:
    """Prompt pairing a class with one generated domain attribute."""
    if not class_name or not attribute:
        raise ValidationError("format_llm: class and attribute must be non-empty")
    return f"A {class_name} with {attribute}"


@dataclass(frozen=True)
class DomainTemplateSet:
    """A domain's name plus its list of descriptive attributes."""

    domain_name: str
    attributes: tuple[str, ...]

    def __post_init__(self):
        if not self.domain_name:
            raise ValidationError("domain_name must be non-empty")
        if len(self.attributes) < 1:
            raise ValidationError(f"domain {self.domain_name!r} needs at least one attribute")
        if any(not a for a in self.attributes):
            raise ValidationError(f"domain {self.domain_name!r} has an empty attribute")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValidationError(f"domain {self.domain_name!r} has duplicate attributes")

    @staticmethod
    def load(path: str | Path) -> "DomainTemplateSet":
        """Parse a template data file: first line "domain: <name>", then one
        attribute per line (blank lines skipped)."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("domain: "):
            raise FormatError(f"{path}: first line must be 'domain: <name>'")
        name = lines[0][len("domain: "):].strip()
        attrs = tuple(ln.strip() for ln in lines[1:] if ln.strip())
        return DomainTemplateSet(name, attrs)

    def save(self, path: str | Path) -> None:
        body = f"domain: {self.domain_name}\n" + "".join(a + "\n" for a in self.attributes)
        Path(path).write_text(body, encoding="utf-8")


_BUILTIN_DIR = Path(__file__).parent / "templates"


def builtin_template(domain: str) -> DomainTemplateSet:
    """One of the shipped attribute sets: synthetic, real, day-time,
    night-time, foggy, rainy, snowy."""
    path = _BUILTIN_DIR / f"{domain}.txt"
    if not path.exists():
        names = sorted(p.stem for p in _BUILTIN_DIR.glob("*.txt"))
        raise ValidationError(f"no builtin template {domain!r}; available: {names}")
    return DomainTemplateSet.load(path)


@dataclass(frozen=True)
class ClassList:
    """Ordered class names; the position in the list is the mask label id."""

    names: tuple[str, ...]

    def __post_init__(self):
        if any(not n for n in self.names):
            raise ValidationError("class names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("class names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)


def class_prompts(templates: DomainTemplateSet, class_name: str, mode: str) -> list[str]:
    """All prompts for one (domain, class) pair under the given template mode."""
    if mode == "handcrafted":
        return [format_handcrafted(templates.domain_name, class_name)]
    if mode == "llm":
        return [format_llm(class_name, attr) for attr in templates.attributes]
    raise ValidationError(f"unknown template mode {mode!r}")


def enumerate_prompts(source: DomainTemplateSet, target: DomainTemplateSet,
                      classes: "ClassList", mode: str) -> list[str]:
    """Every prompt a text bank build will request, source domain first, then
    target, classes in id order, attributes in file order."""
    out: list[str] = []
    for templates in (source, target):
        for c in classes:
            out.extend(class_prompts(templates, c, mode))
    return out


def golden_prompt_lines(source: DomainTemplateSet, target: DomainTemplateSet,
                        classes: "ClassList") -> list[str]:
    """Canonical prompt enumeration across both template modes; used as the
    cross-implementation fixture for any external embedding exporter."""
    return (enumerate_prompts(source, target, classes, "handcrafted")
            + enumerate_prompts(source, target, classes, "llm"))


def domain_class_embedding(provider, templates: DomainTemplateSet, class_name: str,
                           mode: str = "llm") -> np.ndarray:
    """Mean embedding over a class's prompts for one domain.

    Prompts are sorted before summation so the result is bitwise independent
    of attribute order; accumulation runs in float64 and is cast back.
    """
    prompts = sorted(class_prompts(templates, class_name, mode))
    acc = np.zeros(provider.dim, dtype=np.float64)
    for p in prompts:
        v = np.asarray(provider(p), dtype=np.float64)
        if v.shape != (provider.dim,):
            raise ValidationError(f"provider returned shape {v.shape}, expected ({provider.dim},)")
        acc += v
    return (acc / len(prompts)).astype(np.float32)


class TextBank:
    """Immutable per-class embeddings: source, target, and their midpoint."""

    def __init__(self, classes: ClassList, t_source: np.ndarray, t_target: np.ndarray):
        if t_source.shape != t_target.shape or t_source.ndim != 2:
            raise ValidationError("TextBank needs matching [C, dim] source/target arrays")
        if t_source.shape[0] != len(classes):
            raise ValidationError(f"{t_source.shape[0]} embeddings for {len(classes)} classes")
        self.classes = classes
        self.dim = int(t_source.shape[1])
        self.t_source = t_source.astype(np.float32)
        self.t_target = t_target.astype(np.float32)
        self.t = 0.5 * (self.t_source + self.t_target)
        for arr in (self.t_source, self.t_target, self.t):
            arr.flags.writeable = False

    def vector(self, class_id: int) -> np.ndarray:
        return self.t[class_id]


def build_text_bank(provider, source: DomainTemplateSet, target: DomainTemplateSet,
                    classes: ClassList, mode: str = "llm") -> TextBank:
    """Embed every class under both domains and average the two, once, up front."""
    t_s = np.stack([domain_class_embedding(provider, source, c, mode) for c in classes])
    t_t = np.stack([domain_class_embedding(provider, target, c, mode) for c in classes])
    return TextBank(classes, t_s, t_t)


def text_covariance(bank: TextBank, present: Sequence[int]) -> np.ndarray:
    """Pairwise cosine similarities of the blended class vectors, restricted to
    the class ids present in the current sample (order preserved)."""
    ids = list(present)
    if len(ids) < 2:
        raise DegenerateBatchError(f"text covariance needs >= 2 classes, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate class ids in {ids}")
    if any(i < 0 or i >= len(bank.classes) for i in ids):
        raise ValidationError(f"class id out of range in {ids}")
    vecs = np.stack([bank.vector(i) for i in ids]).astype(np.float64)
    raw_norms = np.sqrt((vecs ** 2).sum(axis=1))
    norms = np.maximum(raw_norms, 1e-8)
    cov = (vecs @ vecs.T) / np.outer(norms, norms)
    cov = (cov + cov.T) / 2.0  # exact symmetry
    cov[np.diag_indices_from(cov)] = np.where(raw_norms > 1e-8, 1.0, cov.diagonal())
    return cov.astype(np.float32)


# ---------------------------------------------------------------------------
# embedding providers


class HashEmbedder:
    """Deterministic prompt -> unit vector map with no model weights.

    The prompt's UTF-8 bytes are FNV-1a hashed to key a counter-based
    generator; `dim` standard normals are drawn and L2-normalized. Identical
    strings give bitwise identical vectors on any platform.
    """

    def __init__(self, dim: int = 512):
        if dim < 2:
            raise ValidationError(f"hash embedder dim must be >= 2, got {dim}")
        self.dim = dim

    def __call__(self, prompt: str) -> np.ndarray:
        key = rng.fnv1a_64(prompt.encode("utf-8"))
        gen = np.random.Generator(np.random.Philox(key=key))
        v = gen.standard_normal(self.dim)
        return (v / np.sqrt((v ** 2).sum())).astype(np.float32)


def hash_embedder(dim: int = 512) -> HashEmbedder:
    return HashEmbedder(dim)


class CtefTable:
    """Exact-prompt lookup into embeddings loaded from a CTEF file."""

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        self.dim = dim
        self.entries = entries

    def __call__(self, prompt: str) -> np.ndarray:
        try:
            return self.entries[prompt]
        except KeyError:
            raise EmbeddingLookupError(prompt) from None

    def __len__(self) -> int:
        return len(self.entries)


def save_ctef(path: str | Path, entries: "dict[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]") -> None:
    items = list(entries.items() if isinstance(entries, dict) else entries)
    if not items:
        raise ValidationError("refusing to write an empty CTEF file")
    dim = int(np.asarray(items[0][1]).shape[0])
    with open(path, "wb") as fh:
        fh.write(CTEF_MAGIC)
        fh.write(struct.pack("<III", CTEF_VERSION, dim, len(items)))
        for name, vec in items:
            v = np.asarray(vec, dtype=np.float32)
            if v.shape != (dim,):
                raise ValidationError(f"entry {name!r} has dim {v.shape}, header says {dim}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(v.astype("<f4").tobytes())


def load_ctef(path: str | Path) -> CtefTable:
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != CTEF_MAGIC:
        raise FormatError(f"{path}: bad magic, not a CTEF file", offset=0)
    version, dim, count = struct.unpack("<III", take(12, "header"))
    if version != CTEF_VERSION:
        raise FormatError(f"{path}: unsupported CTEF version {version}", offset=4)
    if dim < 1:
        raise FormatError(f"{path}: invalid dim {dim}", offset=8)

    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "entry name length"))
        name = take(name_len, "entry name").decode("utf-8")
        vec = np.frombuffer(take(4 * dim, f"vector for {name!r}"), dtype="<f4").copy()
        entries[name] = vec
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after last entry", offset=off)
    return CtefTable(dim, entries)
