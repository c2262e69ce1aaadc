"""Dense real tensors on top of numpy.

A ``Tensor`` here is simply a C-contiguous ``numpy.ndarray`` of rank 1, 2 or 4
(rank-4 layout is ``(N, C, H, W)``).  The helpers below add the checks the rest
of the package relies on: no implicit broadcasting except against a scalar,
loud failures on shape mismatch, and population statistics everywhere.

Random numbers come from numpy's PCG64 bit generator, so a given seed yields
the same stream on every platform.
"""
from __future__ import annotations

import contextlib
from typing import Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

DEFAULT_DTYPE = np.float32

_deterministic = False


class ShapeError(ValueError):
    pass


def set_deterministic(flag: bool) -> None:
    global _deterministic
    _deterministic = bool(flag)


def is_deterministic() -> bool:
    return _deterministic


@contextlib.contextmanager
def compute_context() -> Iterator[None]:
    """Pin BLAS to one thread while deterministic mode is on."""
    if _deterministic:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (1, 2, 4):
        raise ShapeError(f"rank must be 1, 2 or 4, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all dimensions must be >= 1, got shape {shape}")
    return shape


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def ones(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.ones(_check_shape(shape), dtype=dtype)


def _binary(a, b, ufunc):
    if np.isscalar(a) or np.isscalar(b):
        return ufunc(a, b)
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return ufunc(a, b)


def add(a, b):
    return _binary(a, b, np.add)


def sub(a, b):
    return _binary(a, b, np.subtract)


def mul(a, b):
    return _binary(a, b, np.multiply)


def scale(s: float, a) -> np.ndarray:
    a = np.asarray(a)
    return (a * a.dtype.type(s)) if a.dtype.kind == "f" else a * s


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def reduce(kind: str, t) -> float:
    """Reduce the flattened values of ``t``.

    ``var`` is the population variance (divide by N).  ``median`` of an even
    count is the midpoint of the two central values.
    """
    x = np.asarray(t, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot reduce an empty tensor")
    if kind == "sum":
        return float(x.sum())
    if kind == "mean":
        return float(x.mean())
    if kind == "var":
        d = x - x[0]  # shift so a constant tensor gives exactly 0
        return float(np.mean((d - d.mean()) ** 2))
    if kind == "median":
        return float(np.median(x))
    raise ValueError(f"unknown reduction {kind!r}")


def rand_normal(rng: np.random.Generator, shape, mean: float = 0.0, std: float = 1.0,
                dtype=DEFAULT_DTYPE) -> np.ndarray:
    if std < 0:
        raise ValueError("std must be >= 0")
    shape = _check_shape(shape)
    return (rng.standard_normal(shape) * std + mean).astype(dtype)


def rand_uniform(rng: np.random.Generator, shape, lo: float = 0.0, hi: float = 1.0,
                 dtype=DEFAULT_DTYPE) -> np.ndarray:
    if lo > hi:
        raise ValueError("lo must be <= hi")
    shape = _check_shape(shape)
    return (lo + (hi - lo) * rng.random(shape)).astype(dtype)


def reshape(t: np.ndarray, new_shape) -> np.ndarray:
    new_shape = _check_shape(new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} into {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def flatten_sample(t: np.ndarray) -> np.ndarray:
    """``[N, C, H, W] -> [N, C*H*W]``, channel-major within each sample."""
    if t.ndim != 4:
        raise ShapeError(f"flatten_sample expects rank 4, got {t.shape}")
    return reshape(t, (t.shape[0], t.shape[1] * t.shape[2] * t.shape[3]))
