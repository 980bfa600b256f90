"""Dense float tensors with reverse-mode automatic differentiation.

Just enough tensor algebra for a small convolutional segmentation network and
its losses: strict shapes (no broadcasting beyond Python scalars), float32 by
default, and a recording Tape that replays adjoints in exact reverse order.
Numpy supplies the vectorized arithmetic; every reduction it performs is
order-fixed for a given shape, so forward results are bitwise repeatable
run to run.

Gradients only exist for ops executed under an active ``Tape``:

    with Tape() as tape:
        loss = tmean(relu(x))
        backward(loss)

Outside a tape, the same ops run as plain numpy with zero bookkeeping, which
is what evaluation and teacher inference use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, LabelError, ShapeError

# Toggle for the NaN/Inf guard on op outputs. On by default; the cost is one
# vectorized isfinite scan per op.
FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global FINITE_CHECKS
    FINITE_CHECKS = enabled


class Tensor:
    """A dense float array, optionally tracked for gradients.

    `grad` is populated by `backward` and accumulates additively until
    `zero_grad` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A gradient-free tensor sharing this one's values."""
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars mean Python numbers, never silent broadcasting.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    fn: Callable[[], None]


class Tape:
    """Ordered log of differentiable ops.

    Inputs of a recorded op always precede it (an op can only consume already
    constructed tensors), so the record list is topologically sorted by
    construction and the backward pass is a single reverse sweep. A tape is
    confined to one thread.
    """

    _active: "list[Tape]" = []

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    @staticmethod
    def current() -> "Tape | None":
        return Tape._active[-1] if Tape._active else None

    def backward(self, loss: Tensor) -> None:
        """Populate `grad` on every requires_grad tensor `loss` depends on.

        Visits each recorded op at most once, in reverse recording order;
        gradients from multiple consumers of a tensor add up.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        _accumulate(loss, np.ones_like(loss.data))
        needed = {id(loss)}
        for rec in reversed(self.records):
            if id(rec.out) in needed and rec.out.grad is not None:
                rec.fn()
                for t in rec.inputs:
                    if t.requires_grad:
                        needed.add(id(t))


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss recorded on a tape."""
    if loss._tape is None:
        if loss.requires_grad:
            raise ContractError("loss was not recorded on a tape")
        # A constant loss (e.g. cross entropy over an all-ignored mask): there
        # is nothing to differentiate and no parameter receives gradient.
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        return
    loss._tape.backward(loss)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _make(data: np.ndarray, inputs: Sequence[Tensor], fn: Callable[[], None] | None, op: str) -> Tensor:
    if FINITE_CHECKS and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data, dtype=data.dtype)
    tape = Tape.current()
    if tape is not None and fn is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.records.append(_Record(out, tuple(inputs), fn))
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(a, g)
        _accumulate(b, g)

    out = _make(a.data + b.data, (a, b), fn, "add")
    out_holder.append(out)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(a, g)
        _accumulate(b, -g)

    out = _make(a.data - b.data, (a, b), fn, "sub")
    out_holder.append(out)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out = _make(a.data * b.data, (a, b), fn, "mul")
    out_holder.append(out)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    out_holder = []

    def fn():
        _accumulate(x, out_holder[0].grad * s)

    out = _make(x.data * s, (x,), fn, "scale")
    out_holder.append(out)
    return out


def shift(x: Tensor, s: float) -> Tensor:
    """Add a Python scalar elementwise."""
    out_holder = []

    def fn():
        _accumulate(x, out_holder[0].grad)

    out = _make(x.data + s, (x,), fn, "shift")
    out_holder.append(out)
    return out


def relu(x: Tensor) -> Tensor:
    out_holder = []
    mask = x.data > 0  # subgradient at exactly 0 is 0

    def fn():
        _accumulate(x, out_holder[0].grad * mask)

    out = _make(np.maximum(x.data, 0), (x,), fn, "relu")
    out_holder.append(out)
    return out


def absval(x: Tensor) -> Tensor:
    out_holder = []
    sgn = np.sign(x.data)

    def fn():
        _accumulate(x, out_holder[0].grad * sgn)

    out = _make(np.abs(x.data), (x,), fn, "absval")
    out_holder.append(out)
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    out_holder = []

    def fn():
        _accumulate(x, np.full_like(x.data, out_holder[0].grad))

    out = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), fn, "sum")
    out_holder.append(out)
    return out


def tmean(x: Tensor) -> Tensor:
    out_holder = []
    n = x.data.size

    def fn():
        _accumulate(x, np.full_like(x.data, out_holder[0].grad / n))

    out = _make(np.asarray(x.data.sum() / n, dtype=x.data.dtype), (x,), fn, "mean")
    out_holder.append(out)
    return out


def sum_spatial(x: Tensor) -> Tensor:
    """[C,h,w] -> [C]: sum over the two spatial axes."""
    if x.data.ndim != 3:
        raise ShapeError(f"sum_spatial expects [C,h,w], got {x.shape}")
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(x, np.broadcast_to(g[:, None, None], x.shape).copy())

    out = _make(x.data.sum(axis=(1, 2)), (x,), fn, "sum_spatial")
    out_holder.append(out)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    out_holder = []
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def fn():
        g = out_holder[0].grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    out = _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), fn, "concat")
    out_holder.append(out)
    return out


def stack_scalars(parts: Sequence[Tensor]) -> Tensor:
    """Pack 0-d tensors into a 1-d tensor; gradient routes back per slot."""
    for p in parts:
        if p.data.ndim != 0:
            raise ShapeError(f"stack_scalars expects 0-d tensors, got shape {p.shape}")
    out_holder = []

    def fn():
        g = out_holder[0].grad
        for i, p in enumerate(parts):
            _accumulate(p, np.asarray(g[i], dtype=p.data.dtype))

    out = _make(np.stack([p.data for p in parts]), tuple(parts), fn, "stack")
    out_holder.append(out)
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out_holder = []
    orig = x.shape

    def fn():
        _accumulate(x, out_holder[0].grad.reshape(orig))

    out = _make(x.data.reshape(shape), (x,), fn, "reshape")
    out_holder.append(out)
    return out


def detach(x: Tensor) -> Tensor:
    return x.detach()


# ---------------------------------------------------------------------------
# structured ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [C_in,H,W] with [C_out,C_in,k,k] + per-channel bias.

    Forward runs as an im2col matmul; the adjoint folds patch gradients back
    with a k*k loop of strided adds, which keeps accumulation order fixed.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: want x[C,H,W], kernel[O,C,k,k]; got {x.shape}, {kernel.shape}")
    c_in, h, w = x.shape
    c_out, c_k, k, k2 = kernel.shape
    if c_k != c_in or k != k2:
        raise ShapeError(f"conv2d: kernel {kernel.shape} does not match input channels {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({c_out},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input ({h}+2*{padding})")

    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    out_holder = []

    if k == 1 and stride == 1 and padding == 0:
        # pointwise conv: a plain channel mixing matmul
        x_flat = x.data.reshape(c_in, h * w)
        out_data = (wmat @ x_flat).reshape(c_out, h, w) + bias.data[:, None, None]

        def fn():
            g = out_holder[0].grad
            gmat = g.reshape(c_out, h * w)
            _accumulate(bias, g.sum(axis=(1, 2)))
            _accumulate(kernel, (gmat @ x_flat.T).reshape(kernel.shape))
            if x.requires_grad:
                _accumulate(x, (wmat.T @ gmat).reshape(x.shape))

        out = _make(out_data, (x, kernel, bias), fn, "conv2d")
        out_holder.append(out)
        return out

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C_in, h_out, w_out, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, h_out * w_out)
    out_data = (wmat @ cols).reshape(c_out, h_out, w_out) + bias.data[:, None, None]

    def fn():
        g = out_holder[0].grad
        gmat = g.reshape(c_out, h_out * w_out)
        _accumulate(bias, g.sum(axis=(1, 2)))
        _accumulate(kernel, (gmat @ cols.T).reshape(kernel.shape))
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(c_in, k, k, h_out, w_out)
            dxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride] += dcols[:, ki, kj]
            _accumulate(x, dxp[:, padding:padding + h, padding:padding + w] if padding else dxp)

    out = _make(out_data, (x, kernel, bias), fn, "conv2d")
    out_holder.append(out)
    return out


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    """Replicate each value of [C,h,w] into a factor x factor block."""
    if x.data.ndim != 3:
        raise ShapeError(f"nearest_upsample expects [C,h,w], got {x.shape}")
    if factor < 1:
        raise ShapeError(f"nearest_upsample: factor must be positive, got {factor}")
    c, h, w = x.shape
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(x, g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    # reshape of the broadcast view must materialize, giving one single copy
    data = np.broadcast_to(
        x.data[:, :, None, :, None], (c, h, factor, w, factor)
    ).reshape(c, h * factor, w * factor)
    out = _make(data, (x,), fn, "nearest_upsample")
    out_holder.append(out)
    return out


def softmax_channels(logits: Tensor) -> Tensor:
    """Softmax over the channel axis of [C,H,W]."""
    if logits.data.ndim != 3:
        raise ShapeError(f"softmax_channels expects [C,H,W], got {logits.shape}")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=0, keepdims=True)
    out_holder = []

    def fn():
        g = out_holder[0].grad
        _accumulate(logits, s * (g - (g * s).sum(axis=0, keepdims=True)))

    out = _make(s, (logits,), fn, "softmax_channels")
    out_holder.append(out)
    return out


def argmax_channels(logits: Tensor) -> np.ndarray:
    """Channel argmax of [C,H,W] as an int array; not differentiable."""
    if logits.data.ndim != 3:
        raise ShapeError(f"argmax_channels expects [C,H,W], got {logits.shape}")
    return logits.data.argmax(axis=0).astype(np.int64)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int) -> Tensor:
    """Mean negative log-softmax at the labelled channel, over non-ignored pixels.

    Pixels labelled `ignore_index` contribute nothing; an all-ignored mask
    yields a constant 0 with no gradient path.
    """
    if logits.data.ndim != 3:
        raise ShapeError(f"softmax_cross_entropy expects logits [C,H,W], got {logits.shape}")
    c = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != logits.shape[1:]:
        raise ShapeError(f"labels {labels.shape} do not match logits spatial dims {logits.shape[1:]}")
    invalid = (labels != ignore_index) & ((labels < 0) | (labels >= c))
    if invalid.any():
        bad = labels[invalid].flat[0]
        raise LabelError(f"label {bad} outside [0,{c}) and != ignore_index {ignore_index}")

    valid = labels != ignore_index
    n = int(valid.sum())
    if n == 0:
        return Tensor(np.asarray(0.0, dtype=logits.data.dtype), dtype=logits.data.dtype)

    z = logits.data - logits.data.max(axis=0, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=0)
    ii, jj = np.nonzero(valid)
    lab = labels[ii, jj]
    # -log softmax at the label, evaluated only where needed
    loss = ((np.log(se[ii, jj]) - z[lab, ii, jj]).sum()) / n

    out_holder = []

    def fn():
        g = out_holder[0].grad  # 0-d
        dz = ez / se[None, :, :]
        dz[lab, ii, jj] -= 1.0
        dz *= valid / n
        _accumulate(logits, dz * g)

    out = _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), fn, "softmax_cross_entropy")
    out_holder.append(out)
    return out


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """a.b / (max(|a|,eps) * max(|b|,eps)) as a 0-d tensor."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"cosine_similarity expects vectors, got {a.shape}, {b.shape}")
    _check_same_shape(a, b, "cosine_similarity")
    na_raw = float(np.sqrt((a.data.astype(np.float64) ** 2).sum()))
    nb_raw = float(np.sqrt((b.data.astype(np.float64) ** 2).sum()))
    na = max(na_raw, eps)
    nb = max(nb_raw, eps)
    dot = float(a.data.astype(np.float64) @ b.data.astype(np.float64))
    s = dot / (na * nb)

    out_holder = []

    def fn():
        g = float(out_holder[0].grad)
        # below eps the norm is a constant clamp, so the quotient-rule term
        # disappears for that argument
        da = b.data / (na * nb) - (s * a.data / (na * na) if na_raw > eps else 0.0)
        db = a.data / (na * nb) - (s * b.data / (nb * nb) if nb_raw > eps else 0.0)
        _accumulate(a, (g * da).astype(a.data.dtype, copy=False))
        _accumulate(b, (g * db).astype(b.data.dtype, copy=False))

    out = _make(np.asarray(s, dtype=a.data.dtype), (a, b), fn, "cosine_similarity")
    out_holder.append(out)
    return out


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return f"grad_check {verdict}: max rel error {self.max_rel_error:.3e} at {self.worst_index}"


def grad_check(f, x, h: float = 1e-3, tol_rel: float = 1e-4) -> GradCheckReport:
    """Compare autodiff gradients of scalar f(x) against central differences.

    Runs in float64 regardless of x's dtype so the finite-difference quotient
    keeps enough significand to make the tolerance meaningful. A coordinate
    passes outright when |analytic - numeric| <= 1e-6 (absolute floor);
    otherwise its relative error must be <= tol_rel.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    xt = Tensor(base, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        loss = f(xt)
        if loss.data.size != 1:
            raise ContractError("grad_check needs a scalar-valued f")
        tape.backward(loss)
    analytic = np.zeros_like(base) if xt.grad is None else np.asarray(xt.grad, dtype=np.float64)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(base.shape), dtype=np.float64)).item()
        fm = f(Tensor(xm.reshape(base.shape), dtype=np.float64)).item()
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)

    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= 1e-6, 0.0, diff / np.maximum(denom, 1e-30))
    worst = int(np.argmax(rel))
    max_rel = float(rel.reshape(-1)[worst])
    return GradCheckReport(
        passed=max_rel <= tol_rel,
        max_rel_error=max_rel,
        worst_index=np.unravel_index(worst, base.shape) if base.ndim else (),
        analytic=analytic,
        numeric=numeric,
    )
