"""Binary training checkpoints.

Layout: magic "CKPT" | u32 version | sections. Each section is
u32 name_len | name utf-8 | u64 payload_len | payload, so readers can skip
sections they do not know. Tensor lists are encoded as u32 count followed by
(u8 rank, rank x u32 dims, float32 payload) per tensor. Restoring a checkpoint
and continuing reproduces the uninterrupted run bit for bit: random streams
are keyed by iteration, so the only cursor needed is the iteration itself.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import SegModel, init_model
from .optim import AdamState
from .pixel_features import FeatureMemoryBank

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


@dataclass
class CheckpointData:
    iteration: int
    seed: int
    n_classes: int
    feat_dim: int
    downsample_r: int
    copt_skipped: int
    student: list[np.ndarray]
    teacher: list[np.ndarray]
    bank: dict[int, np.ndarray]
    adam_step: int
    adam_m: list[np.ndarray]
    adam_v: list[np.ndarray]
    channels: tuple[int, int] = (16, 32)


def _pack_tensors(arrs: list[np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrs)))
    for a in arrs:
        a = np.ascontiguousarray(a, dtype="<f4")
        buf.write(struct.pack("<B", a.ndim))
        for d in a.shape:
            buf.write(struct.pack("<I", d))
        buf.write(a.tobytes())
    return buf.getvalue()


def _unpack_tensors(payload: bytes, what: str) -> list[np.ndarray]:
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(payload):
            raise FormatError(f"checkpoint section {what!r} truncated", offset=off)
        out = payload[off:off + n]
        off += n
        return out

    (count,) = struct.unpack("<I", take(4))
    arrs = []
    for _ in range(count):
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        arrs.append(np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy())
    if off != len(payload):
        raise FormatError(f"checkpoint section {what!r} has trailing bytes", offset=off)
    return arrs


def save_checkpoint(path: str | Path, data: CheckpointData) -> None:
    sections: list[tuple[str, bytes]] = []
    sections.append((
        "meta",
        struct.pack(
            "<QqIIIQII",
            data.iteration, data.seed, data.n_classes, data.feat_dim,
            data.downsample_r, data.copt_skipped,
            data.channels[0], data.channels[1],
        ),
    ))
    sections.append(("student", _pack_tensors(data.student)))
    sections.append(("teacher", _pack_tensors(data.teacher)))

    bank_buf = io.BytesIO()
    bank_buf.write(struct.pack("<I", len(data.bank)))
    for cid in sorted(data.bank):
        vec = np.ascontiguousarray(data.bank[cid], dtype="<f4")
        bank_buf.write(struct.pack("<iI", cid, vec.size))
        bank_buf.write(vec.tobytes())
    sections.append(("bank", bank_buf.getvalue()))

    adam_buf = io.BytesIO()
    adam_buf.write(struct.pack("<Q", data.adam_step))
    adam_buf.write(_pack_tensors(data.adam_m))
    adam_buf.write(_pack_tensors(data.adam_v))
    sections.append(("adam", adam_buf.getvalue()))

    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        for name, payload in sections:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> CheckpointData:
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        out = blob[off:off + n]
        off += n
        return out

    if take(4, "magic") != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)

    sections: dict[str, bytes] = {}
    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4, "section name length"))
        name = take(name_len, "section name").decode("utf-8")
        (payload_len,) = struct.unpack("<Q", take(8, f"length of section {name!r}"))
        sections[name] = take(payload_len, f"section {name!r}")

    for required in ("meta", "student", "teacher", "bank", "adam"):
        if required not in sections:
            raise FormatError(f"{path}: missing checkpoint section {required!r}")

    iteration, seed, n_classes, feat_dim, r, skipped, ch0, ch1 = struct.unpack(
        "<QqIIIQII", sections["meta"])

    bank_payload = sections["bank"]
    boff = 0
    (count,) = struct.unpack_from("<I", bank_payload, boff)
    boff += 4
    bank: dict[int, np.ndarray] = {}
    for _ in range(count):
        cid, size = struct.unpack_from("<iI", bank_payload, boff)
        boff += 8
        bank[cid] = np.frombuffer(bank_payload, dtype="<f4", count=size, offset=boff).copy()
        boff += 4 * size

    adam_payload = sections["adam"]
    (adam_step,) = struct.unpack_from("<Q", adam_payload, 0)
    rest = adam_payload[8:]
    # m and v are two back-to-back tensor lists; split by re-measuring m
    m_len = _measure_tensor_list(rest, "adam.m")
    adam_m = _unpack_tensors(rest[:m_len], "adam.m")
    adam_v = _unpack_tensors(rest[m_len:], "adam.v")

    return CheckpointData(
        iteration=int(iteration), seed=int(seed), n_classes=int(n_classes),
        feat_dim=int(feat_dim), downsample_r=int(r), copt_skipped=int(skipped),
        channels=(int(ch0), int(ch1)),
        student=_unpack_tensors(sections["student"], "student"),
        teacher=_unpack_tensors(sections["teacher"], "teacher"),
        bank=bank, adam_step=int(adam_step), adam_m=adam_m, adam_v=adam_v,
    )


def _measure_tensor_list(payload: bytes, what: str) -> int:
    off = 0
    if len(payload) < 4:
        raise FormatError(f"checkpoint section {what!r} truncated", offset=off)
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    for _ in range(count):
        (rank,) = struct.unpack_from("<B", payload, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", payload, off) if rank else ()
        off += 4 * rank
        off += 4 * (int(np.prod(dims, dtype=np.int64)) if dims else 1)
        if off > len(payload):
            raise FormatError(f"checkpoint section {what!r} truncated", offset=off)
    return off


def apply_params(model: SegModel, arrays: list[np.ndarray]) -> None:
    params = model.parameters()
    if len(params) != len(arrays):
        raise FormatError(f"checkpoint holds {len(arrays)} tensors, model has {len(params)}")
    for p, a in zip(params, arrays):
        if p.data.shape != a.shape:
            raise FormatError(f"checkpoint tensor shape {a.shape} vs model {p.data.shape}")
        p.data = a.copy()


def model_from_checkpoint(data: CheckpointData) -> SegModel:
    model = init_model(seed=data.seed, c=data.n_classes, d=data.feat_dim,
                       r=data.downsample_r, channels=data.channels)
    apply_params(model, data.student)
    return model


def restore_bank(bank: FeatureMemoryBank, data: CheckpointData) -> None:
    bank.restore(data.bank)


def restore_adam(state: AdamState, data: CheckpointData) -> None:
    state.step = data.adam_step
    state.m = [a.copy() for a in data.adam_m]
    state.v = [a.copy() for a in data.adam_v]
