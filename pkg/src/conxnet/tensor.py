"""Tensor helpers.

Tensors are plain ``numpy.ndarray`` values of rank 0-4, float32 for training,
float64 for gradient checks and ``longdouble`` for the checker's probes. Activations use (batch, channels, height, width).
Every helper returns a fresh array; nothing returns a view.
"""
import numpy as np

from . import kernels
from .errors import ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64), np.dtype(np.longdouble))
MAX_RANK = 4


def check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) > MAX_RANK:
        raise ShapeError(f"rank {len(shape)} exceeds maximum rank {MAX_RANK}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"every extent must be >= 1, got {shape}")
    return shape


def as_tensor(data, dtype=np.float32):
    """Copy ``data`` into a contiguous float tensor, validating shape and finiteness."""
    dtype = np.dtype(dtype)
    if dtype not in FLOAT_DTYPES:
        raise TypeError(f"unsupported dtype {dtype}; use float32, float64 or longdouble")
    arr = np.array(data, dtype=dtype, copy=True, order="C")
    check_shape(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def zeros(shape, dtype=np.float32):
    return np.zeros(check_shape(shape), dtype=dtype)


def _broadcast_operand(a, b):
    if a.shape == b.shape:
        return b
    # per-channel vector over (batch, H, W) or over batch for rank-2 inputs
    if b.ndim == 1 and a.ndim in (2, 4) and b.shape[0] == a.shape[1]:
        return b.reshape((1, -1) + (1,) * (a.ndim - 2))
    raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op, a, b):
    """Apply ``op`` in {'add', 'sub', 'mul'} pointwise; ``b`` may be a channel vector."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    a = np.asarray(a)
    b = np.asarray(b)
    return fn(a, _broadcast_operand(a, b))


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    check_shape(a.shape)
    check_shape(b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


_REDUCE = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(op, t, axes=None, keepdims=False):
    """Reduce ``t`` over ``axes`` (None means all axes) with op in {'sum', 'mean', 'max'}."""
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}") from None
    t = np.asarray(t)
    if axes is None:
        axes = tuple(range(t.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    norm = []
    for ax in axes:
        if not -t.ndim <= ax < t.ndim:
            raise ShapeError(f"axis {ax} out of range for shape {t.shape}")
        norm.append(ax % t.ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return np.asarray(fn(t, axis=tuple(norm), keepdims=keepdims))
