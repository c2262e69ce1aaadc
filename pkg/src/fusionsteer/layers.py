"""Layers with hand-written forward and backward passes.

Every forward is a pure function of (parameters, input); the caller keeps
whatever it needs for the backward pass.  Convolutions are 3x3, stride 1,
zero padding 1 (cross-correlation, no kernel flip).  Pooling is 2x2, stride 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DEFAULT_DTYPE, ShapeError


@dataclass
class LayerGradients:
    grad_weight: np.ndarray | None
    grad_bias: np.ndarray | None
    grad_input: np.ndarray


class Conv2dLayer:
    kernel_size = 3

    def __init__(self, c_in: int, c_out: int, dtype=DEFAULT_DTYPE):
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.weight = np.zeros((self.c_out, self.c_in, 3, 3), dtype=dtype)
        self.bias = np.zeros(self.c_out, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.c_in * 9

    @property
    def fan_out(self) -> int:
        return self.c_out * 9

    def __repr__(self):
        return f"Conv2dLayer({self.c_in} -> {self.c_out}, 3x3)"


class FcLayer:
    def __init__(self, d_in: int, d_out: int, dtype=DEFAULT_DTYPE):
        self.d_in, self.d_out = int(d_in), int(d_out)
        self.weight = np.zeros((self.d_out, self.d_in), dtype=dtype)
        self.bias = np.zeros(self.d_out, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.d_in

    @property
    def fan_out(self) -> int:
        return self.d_out

    def __repr__(self):
        return f"FcLayer({self.d_in} -> {self.d_out})"


def _im2col(x: np.ndarray) -> np.ndarray:
    # [N, C, H, W] -> [N*H*W, C*9], columns ordered (c, u, v) to match weight.reshape(C_out, -1)
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv2d_forward(layer: Conv2dLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != layer.c_in:
        raise ShapeError(f"{layer!r} got input of shape {x.shape}")
    n, _, h, w = x.shape
    cols = _im2col(x)
    out = cols @ layer.weight.reshape(layer.c_out, -1).T
    out += layer.bias
    return np.ascontiguousarray(out.reshape(n, h, w, layer.c_out).transpose(0, 3, 1, 2))


def conv2d_backward(layer: Conv2dLayer, x: np.ndarray, grad_out: np.ndarray) -> LayerGradients:
    n, c, h, w = x.shape
    if grad_out.shape != (n, layer.c_out, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {(n, layer.c_out, h, w)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, layer.c_out)
    cols = _im2col(x)
    grad_w = (g.T @ cols).reshape(layer.weight.shape)
    grad_b = g.sum(axis=0)
    gcols = (g @ layer.weight.reshape(layer.c_out, -1)).reshape(n, h, w, c, 3, 3)
    gxp = np.zeros((n, c, h + 2, w + 2), dtype=grad_out.dtype)
    for u in range(3):
        for v in range(3):
            gxp[:, :, u:u + h, v:v + w] += gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return LayerGradients(grad_w.astype(layer.weight.dtype), grad_b.astype(layer.bias.dtype),
                          np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    if x.shape != grad_out.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/2 max pooling.

    Returns the pooled tensor and, per output cell, the winning position inside
    its window as a row-major index 0..3.  Ties go to the first maximum.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects rank 4, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool needs even height and width, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int8)


def maxpool2_backward(indices: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if indices.shape != grad_out.shape:
        raise ShapeError(f"indices {indices.shape} do not match grad_out {grad_out.shape}")
    n, c, h2, w2 = grad_out.shape
    onehot = indices[..., None] == np.arange(4, dtype=np.int8)
    g = np.where(onehot, grad_out[..., None], 0).astype(grad_out.dtype)
    g = g.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(n, c, 2 * h2, 2 * w2))


def fc_forward(layer: FcLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError(f"{layer!r} got input of shape {x.shape}")
    return x @ layer.weight.T + layer.bias


def fc_backward(layer: FcLayer, x: np.ndarray, grad_out: np.ndarray) -> LayerGradients:
    if grad_out.shape != (x.shape[0], layer.d_out):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {(x.shape[0], layer.d_out)}")
    return LayerGradients(grad_out.T @ x, grad_out.sum(axis=0), grad_out @ layer.weight)


def concat_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(grad: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    return grad[:, :p], grad[:, p:]


def init_parameters(rng: np.random.Generator, layer, output: bool = False) -> None:
    """He-normal weights for hidden layers, Xavier-uniform for the output layer; zero biases."""
    dtype = layer.weight.dtype
    if output:
        limit = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
        layer.weight[...] = rng.uniform(-limit, limit, layer.weight.shape).astype(dtype)
    else:
        std = np.sqrt(2.0 / layer.fan_in)
        layer.weight[...] = (rng.standard_normal(layer.weight.shape) * std).astype(dtype)
    layer.bias[...] = 0
