"""Raw numerical kernels: direct convolution, 2x2 max pooling and matmul.

Every kernel exists twice: an ``@njit`` loop version and a pure-numpy version.
The module-level names (``conv2d_forward`` etc.) point at whichever backend
``conxnet._accel`` selected; arrays of any dtype other than float32/float64
(extended precision, used by the gradient checker) always take the numpy path. Both versions of ``conv2d_forward`` and ``matmul``
accumulate each output element in the same order as a scalar nested loop
(bias first, then channel, kernel row, kernel column), so they agree with a
loop oracle bit for bit.
"""
import functools

import numpy as np

from ._accel import BACKEND, USE_NUMBA, njit

__all__ = [
    "BACKEND",
    "conv_output_size",
    "pad2d",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "matmul",
    "NUMBA_KERNELS",
    "NUMPY_KERNELS",
]


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def pad2d(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


# ---------------------------------------------------------------------------
# numba kernels


@njit
def _conv2d_fwd_loop(xpad, w, b, stride, out):
    N, C, _, _ = xpad.shape
    O, _, KH, KW = w.shape
    OH, OW = out.shape[2], out.shape[3]
    for n in range(N):
        for o in range(O):
            bo = b[o]
            for i in range(OH):
                for j in range(OW):
                    out[n, o, i, j] = bo
            for c in range(C):
                for u in range(KH):
                    for v in range(KW):
                        wv = w[o, c, u, v]
                        for i in range(OH):
                            row = i * stride + u
                            if stride == 1:
                                for j in range(OW):
                                    out[n, o, i, j] += wv * xpad[n, c, row, j + v]
                            else:
                                for j in range(OW):
                                    out[n, o, i, j] += wv * xpad[n, c, row, j * stride + v]
    return out


# reassoc lets the weight-gradient reduction vectorize; summation order is
# still fixed per compiled kernel, so results stay deterministic.
@njit(fastmath={"reassoc", "contract"})
def _conv2d_bwd_loop(xpad, w, g, stride, gxpad, gw, gb):
    N, C, _, _ = xpad.shape
    O, _, KH, KW = w.shape
    OH, OW = g.shape[2], g.shape[3]
    for n in range(N):
        for o in range(O):
            s = g[n, o, 0, 0] * 0
            for i in range(OH):
                for j in range(OW):
                    s += g[n, o, i, j]
            gb[o] += s
            for c in range(C):
                for u in range(KH):
                    for v in range(KW):
                        wv = w[o, c, u, v]
                        acc = wv * 0
                        for i in range(OH):
                            row = i * stride + u
                            if stride == 1:
                                for j in range(OW):
                                    gv = g[n, o, i, j]
                                    acc += gv * xpad[n, c, row, j + v]
                                    gxpad[n, c, row, j + v] += wv * gv
                            else:
                                for j in range(OW):
                                    gv = g[n, o, i, j]
                                    acc += gv * xpad[n, c, row, j * stride + v]
                                    gxpad[n, c, row, j * stride + v] += wv * gv
                        gw[o, c, u, v] += acc


@njit
def _maxpool_fwd_loop(x, k, s, out, argmax):
    N, C, H, W = x.shape
    OH, OW = out.shape[2], out.shape[3]
    for n in range(N):
        for c in range(C):
            for i in range(OH):
                for j in range(OW):
                    r0 = i * s
                    c0 = j * s
                    best = x[n, c, r0, c0]
                    idx = r0 * W + c0
                    for u in range(k):
                        for v in range(k):
                            val = x[n, c, r0 + u, c0 + v]
                            if val > best:
                                best = val
                                idx = (r0 + u) * W + c0 + v
                    out[n, c, i, j] = best
                    argmax[n, c, i, j] = idx
    return out


@njit
def _maxpool_bwd_loop(g, argmax, gx):
    N, C, OH, OW = g.shape
    W = gx.shape[3]
    for n in range(N):
        for c in range(C):
            for i in range(OH):
                for j in range(OW):
                    idx = argmax[n, c, i, j]
                    gx[n, c, idx // W, idx % W] += g[n, c, i, j]
    return gx


@njit
def _matmul_loop(a, b, out):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            out[i, j] = 0
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


def _conv2d_forward_numba(x, w, b, stride=1, padding=0):
    xpad = pad2d(x, padding)
    N, _, Hp, Wp = xpad.shape
    O, _, KH, KW = w.shape
    OH = (Hp - KH) // stride + 1
    OW = (Wp - KW) // stride + 1
    out = np.empty((N, O, OH, OW), dtype=x.dtype)
    return _conv2d_fwd_loop(xpad, np.ascontiguousarray(w), np.ascontiguousarray(b), stride, out)


def _conv2d_backward_numba(x, w, grad_out, stride=1, padding=0):
    xpad = pad2d(x, padding)
    gxpad = np.zeros_like(xpad)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=w.dtype)
    _conv2d_bwd_loop(xpad, np.ascontiguousarray(w), np.ascontiguousarray(grad_out), stride, gxpad, gw, gb)
    return _unpad(gxpad, padding), gw, gb


def _maxpool2d_forward_numba(x, window=2, stride=2):
    N, C, H, W = x.shape
    OH = (H - window) // stride + 1
    OW = (W - window) // stride + 1
    out = np.empty((N, C, OH, OW), dtype=x.dtype)
    argmax = np.empty((N, C, OH, OW), dtype=np.int64)
    _maxpool_fwd_loop(np.ascontiguousarray(x), window, stride, out, argmax)
    return out, argmax


def _maxpool2d_backward_numba(grad_out, argmax, input_shape):
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    return _maxpool_bwd_loop(np.ascontiguousarray(grad_out), argmax, gx)


def _matmul_numba(a, b):
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    return _matmul_loop(np.ascontiguousarray(a), np.ascontiguousarray(b), out)


# ---------------------------------------------------------------------------
# numpy kernels


def _unpad(xpad, padding):
    if padding == 0:
        return xpad
    return np.ascontiguousarray(xpad[:, :, padding:-padding, padding:-padding])


def _window(xpad, u, v, OH, OW, stride):
    return xpad[:, :, u : u + stride * (OH - 1) + 1 : stride, v : v + stride * (OW - 1) + 1 : stride]


def _conv2d_forward_numpy(x, w, b, stride=1, padding=0):
    xpad = pad2d(x, padding)
    N, C, Hp, Wp = xpad.shape
    O, _, KH, KW = w.shape
    OH = (Hp - KH) // stride + 1
    OW = (Wp - KW) // stride + 1
    out = np.empty((N, O, OH, OW), dtype=x.dtype)
    out[...] = b[None, :, None, None]
    # one fused pass per (c, u, v) keeps the scalar loop's accumulation order
    for c in range(C):
        for u in range(KH):
            for v in range(KW):
                xs = _window(xpad, u, v, OH, OW, stride)[:, c]
                out += w[None, :, c, u, v, None, None] * xs[:, None]
    return out


def _conv2d_backward_numpy(x, w, grad_out, stride=1, padding=0):
    xpad = pad2d(x, padding)
    O, C, KH, KW = w.shape
    OH, OW = grad_out.shape[2], grad_out.shape[3]
    gxpad = np.zeros_like(xpad)
    gw = np.zeros_like(w)
    gb = grad_out.sum(axis=(0, 2, 3))
    for u in range(KH):
        for v in range(KW):
            xs = _window(xpad, u, v, OH, OW, stride)
            gw[:, :, u, v] = np.tensordot(grad_out, xs, axes=([0, 2, 3], [0, 2, 3]))
            back = np.tensordot(w[:, :, u, v], grad_out, axes=([0], [1]))
            _window(gxpad, u, v, OH, OW, stride)[...] += back.transpose(1, 0, 2, 3)
    return _unpad(gxpad, padding), gw, gb.astype(w.dtype, copy=False)


def _maxpool2d_forward_numpy(x, window=2, stride=2):
    N, C, H, W = x.shape
    OH = (H - window) // stride + 1
    OW = (W - window) // stride + 1
    out = None
    argmax = None
    rows = np.arange(OH)[:, None] * stride
    cols = np.arange(OW)[None, :] * stride
    # row-major scan with strict '>' keeps the first index on ties
    for u in range(window):
        for v in range(window):
            cand = x[:, :, u : u + stride * (OH - 1) + 1 : stride, v : v + stride * (OW - 1) + 1 : stride]
            idx = np.broadcast_to((rows + u) * W + cols + v, cand.shape)
            if out is None:
                out = cand.copy()
                argmax = idx.astype(np.int64)
            else:
                better = cand > out
                out = np.where(better, cand, out)
                argmax = np.where(better, idx, argmax)
    return np.ascontiguousarray(out), np.ascontiguousarray(argmax)


def _maxpool2d_backward_numpy(grad_out, argmax, input_shape):
    N, C, H, W = input_shape
    gx = np.zeros((N, C, H * W), dtype=grad_out.dtype)
    flat_idx = argmax.reshape(N, C, -1)
    np.add.at(gx, (np.arange(N)[:, None, None], np.arange(C)[None, :, None], flat_idx), grad_out.reshape(N, C, -1))
    return gx.reshape(input_shape)


def _matmul_numpy(a, b):
    m, k = a.shape
    out = np.zeros((m, b.shape[1]), dtype=np.result_type(a, b))
    # sequential over k so rounding matches the loop kernel
    for p in range(k):
        out += a[:, p, None] * b[p][None, :]
    return out


NUMBA_KERNELS = {
    "conv2d_forward": _conv2d_forward_numba,
    "conv2d_backward": _conv2d_backward_numba,
    "maxpool2d_forward": _maxpool2d_forward_numba,
    "maxpool2d_backward": _maxpool2d_backward_numba,
    "matmul": _matmul_numba,
}

NUMPY_KERNELS = {
    "conv2d_forward": _conv2d_forward_numpy,
    "conv2d_backward": _conv2d_backward_numpy,
    "maxpool2d_forward": _maxpool2d_forward_numpy,
    "maxpool2d_backward": _maxpool2d_backward_numpy,
    "matmul": _matmul_numpy,
}

_NATIVE = (np.dtype(np.float32), np.dtype(np.float64))


def _route(name):
    fast, slow = NUMBA_KERNELS[name], NUMPY_KERNELS[name]

    @functools.wraps(fast)
    def run(first, *args):
        return (fast if first.dtype in _NATIVE else slow)(first, *args)

    return run


_ACTIVE = {k: _route(k) for k in NUMBA_KERNELS} if USE_NUMBA else NUMPY_KERNELS

conv2d_forward = _ACTIVE["conv2d_forward"]
conv2d_backward = _ACTIVE["conv2d_backward"]
maxpool2d_forward = _ACTIVE["maxpool2d_forward"]
maxpool2d_backward = _ACTIVE["maxpool2d_backward"]
matmul = _ACTIVE["matmul"]
