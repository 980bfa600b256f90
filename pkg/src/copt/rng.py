"""Deterministic, replayable random streams.

Every random draw in the package comes from a counter-based Philox generator
whose 64-bit key is derived by FNV-1a hashing of a (seed, tag, ...) tuple.
Streams are therefore independent of each other and of call order: the stream
for iteration 1234's block mask is the same whether the run started at
iteration 0 or resumed from a checkpoint at 1000.
"""

from __future__ import annotations

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _encode_part(part) -> bytes:
    if isinstance(part, str):
        return b"s" + part.encode("utf-8")
    if isinstance(part, (int, np.integer)):
        return b"i" + int(part).to_bytes(8, "little", signed=True)
    raise TypeError(f"stream key parts must be str or int, got {type(part).__name__}")

def stream_key(*parts) -> int:
    """Collapse (seed, tag, ...) into a 64-bit Philox key.

    Parts are length-prefixed before hashing so ("ab", "c") and ("a", "bc")
    key different streams.
    """
    blob = b"".join(len(p := _encode_part(x)).to_bytes(2, "little") + p for x in parts)
    return fnv1a_64(blob)


def stream(*parts) -> np.random.Generator:
    """A fresh Generator for the stream named by `parts`."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
