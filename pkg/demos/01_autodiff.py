"""Walk through the tensor engine: forward ops, the tape, and gradient checks.

Run: python3 demos/01_autodiff.py
"""

import numpy as np

from copt.tensor import Tape, Tensor, conv2d, cosine_similarity, grad_check, mul, relu, tsum

print("A tensor is a plain float32 array; gradients appear only for ops")
print("recorded under an active Tape.\n")

x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
with Tape() as tape:
    y = tsum(mul(x, x))  # sum of squares
    tape.backward(y)
print(f"d/dx sum(x*x) at {x.data} -> {x.grad}   (expected 2x)\n")

print("The same ops outside a tape run as plain numpy, no graph kept:")
z = relu(Tensor(np.array([-1.0, 0.5])))
print(f"relu([-1, 0.5]) = {z.data}, requires_grad={z.requires_grad}\n")

print("Convolution is cross-correlation over [C,H,W]:")
img = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4))
box = Tensor(np.full((1, 1, 2, 2), 0.25))
out = conv2d(img, box, Tensor(np.zeros(1)), stride=2)
print(f"4x4 ramp under a 2x2 box kernel, stride 2 ->\n{out.data[0]}\n")

print("Every differentiable op is validated against central finite differences")
print("(the checks run in float64 so the 1e-4 tolerance is meaningful):")
v = Tensor(np.array([0.3, -0.8, 0.2]), dtype=np.float64)
rep = grad_check(lambda a: cosine_similarity(a, v), Tensor(np.array([1.0, 0.4, -0.2])))
print(rep)
