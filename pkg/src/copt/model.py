"""Small encoder-decoder segmentation network.

Three conv+relu blocks whose strides multiply to the downsampling factor r,
then a 1x1 conv head from feature width D to C classes, upsampled back to the
input resolution so the cross entropy sees every pixel. Weights come from a
counter-based generator keyed by (seed, layer), so construction is bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, conv2d, nearest_upsample, relu

_STRIDES = {2: (2, 1, 1), 4: (2, 2, 1), 8: (2, 2, 2)}


@dataclass
class ConvLayer:
    weight: Tensor
    bias: Tensor
    stride: int
    padding: int


@dataclass
class SegModel:
    layers: list[ConvLayer]  # encoder convs followed by the 1x1 decoder conv
    r: int
    d: int
    c: int
    seed: int

    @property
    def encoder_layers(self) -> list[ConvLayer]:
        return self.layers[:-1]

    @property
    def decoder(self) -> ConvLayer:
        return self.layers[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def expected_param_count(c: int, d: int, channels: tuple[int, ...]) -> int:
    """Closed-form parameter count for the stock 3x3 encoder + 1x1 head."""
    total = 0
    c_in = 3
    for c_out in (*channels, d):
        total += c_out * c_in * 9 + c_out
        c_in = c_out
    total += c * d + c
    return total


def init_model(seed: int, c: int = 5, d: int = 32, r: int = 4,
               channels: tuple[int, ...] = (16, 32)) -> SegModel:
    """Kaiming-uniform initialization, one generator per layer."""
    if r not in _STRIDES:
        raise ConfigError(f"r must be one of {sorted(_STRIDES)}, got {r}")
    if d < 4:
        raise ConfigError(f"feature width d must be >= 4, got {d}")
    if len(channels) != 2:
        raise ConfigError(f"channel schedule needs 2 intermediate widths, got {channels}")

    strides = _STRIDES[r]
    plan = [
        (3, channels[0], 3, strides[0], 1),
        (channels[0], channels[1], 3, strides[1], 1),
        (channels[1], d, 3, strides[2], 1),
        (d, c, 1, 1, 0),
    ]
    layers = []
    for idx, (c_in, c_out, k, stride, pad) in enumerate(plan):
        gen = rng.stream(seed, "init", idx)
        fan_in = c_in * k * k
        limit = float(np.sqrt(6.0 / fan_in))  # kaiming uniform, relu gain
        w = gen.uniform(-limit, limit, size=(c_out, c_in, k, k)).astype(np.float32)
        b = np.zeros(c_out, dtype=np.float32)
        layers.append(ConvLayer(
            weight=Tensor(w, requires_grad=True),
            bias=Tensor(b, requires_grad=True),
            stride=stride,
            padding=pad,
        ))
    return SegModel(layers=layers, r=r, d=d, c=c, seed=seed)


def forward(model: SegModel, x: Tensor) -> tuple[Tensor, Tensor]:
    """Run one [3,H,W] image; returns (features [D,H/r,W/r], logits [C,H,W])."""
    if x.data.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected input [3,H,W], got {x.shape}")
    _, h, w = x.shape
    if h % model.r or w % model.r:
        raise ShapeError(f"input dims {(h, w)} not divisible by r={model.r}")
    out = x
    for layer in model.encoder_layers:
        out = relu(conv2d(out, layer.weight, layer.bias, stride=layer.stride, padding=layer.padding))
    feats = out
    dec = model.decoder
    logits = nearest_upsample(conv2d(feats, dec.weight, dec.bias), model.r)
    return feats, logits


def clone_params(model: SegModel) -> SegModel:
    """Deep copy with gradient tracking off (the usual teacher setup)."""
    layers = [
        ConvLayer(
            weight=Tensor(l.weight.data.copy(), requires_grad=False),
            bias=Tensor(l.bias.data.copy(), requires_grad=False),
            stride=l.stride,
            padding=l.padding,
        )
        for l in model.layers
    ]
    return SegModel(layers=layers, r=model.r, d=model.d, c=model.c, seed=model.seed)


def ema_update(teacher: SegModel, student: SegModel, alpha: float) -> None:
    """teacher <- alpha*teacher + (1-alpha)*student, in place."""
    t_params, s_params = teacher.parameters(), student.parameters()
    if len(t_params) != len(s_params):
        raise ContractError("teacher/student parameter lists differ in length")
    for tp, sp in zip(t_params, s_params):
        if tp.data.shape != sp.data.shape:
            raise ContractError(f"parameter shape mismatch {tp.shape} vs {sp.shape}")
        if alpha == 0.0:
            tp.data = sp.data.copy()
        else:
            tp.data = (alpha * tp.data + (1.0 - alpha) * sp.data).astype(np.float32)
