"""Layers by hand: forward passes, max-pool routing and a finite-difference check."""
import numpy as np

from fusionsteer import layers as L
from fusionsteer.tensor import make_rng

rng = make_rng(0)

# A 3x3 kernel of ones on a ones image counts the taps that land inside the
# zero padding: 4 in the corners, 6 on the edges, 9 in the middle.
conv = L.Conv2dLayer(1, 1)
conv.weight[...] = 1
print(L.conv2d_forward(conv, np.ones((1, 1, 3, 3), np.float32))[0, 0])

# Max-pool keeps the argmax of every 2x2 window (0..3, row-major inside the
# window) so the backward pass can route each gradient to a single input.
x = rng.standard_normal((1, 1, 4, 4))
pooled, idx = L.maxpool2_forward(x)
print("pooled\n", pooled[0, 0])
print("window argmax\n", idx[0, 0])
print("routed gradient\n", L.maxpool2_backward(idx, np.ones_like(pooled))[0, 0])

# Backward of a fully connected layer against central differences in 64-bit.
fc = L.FcLayer(4, 3, np.float64)
L.init_parameters(rng, fc)
v = rng.standard_normal((2, 4))
r = rng.standard_normal((2, 3))
grads = L.fc_backward(fc, v, r)

h = 1e-4
numeric = np.zeros_like(fc.weight)
for i in np.ndindex(fc.weight.shape):
    old = fc.weight[i]
    fc.weight[i] = old + h
    up = np.sum(L.fc_forward(fc, v) * r)
    fc.weight[i] = old - h
    down = np.sum(L.fc_forward(fc, v) * r)
    fc.weight[i] = old
    numeric[i] = (up - down) / (2 * h)
print("max |analytic - numeric| =", np.abs(grads.grad_weight - numeric).max())
