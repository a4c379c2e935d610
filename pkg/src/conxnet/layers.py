"""Layers with hand-written backward passes.

Each layer caches what its backward needs during ``forward``. ``backward``
takes dL/d(output), fills ``self.grads`` (same keys as ``self.params``) and
returns dL/d(input).
"""
import numpy as np

from . import kernels
from .errors import ShapeError, StateError
from .tensor import add, matmul, reduce


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even where exp saturates
    fi = np.finfo(x.dtype)
    return np.clip(out, fi.tiny, 1.0 - fi.epsneg)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.training = True
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    __call__ = forward

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def kink_state(self):
        """Discrete state the output depends on non-smoothly (None if smooth)."""
        return None

    def astype(self, dtype):
        for store in (self.params, self.buffers):
            for k, v in store.items():
                store[k] = v.astype(dtype)
        self._cache = None
        return self

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def _check_grad(self, grad_out, expected):
        if grad_out.shape != expected:
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {expected}")


class Conv2D(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=1, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1 or padding < 0:
            raise ValueError("kernel and stride must be >= 1 and padding >= 0")
        rng = np.random.default_rng() if rng is None else rng
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        self.params["weight"] = he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype)
        self.params["bias"] = np.zeros(out_ch, dtype=dtype)

    def output_shape(self, h, w):
        oh = kernels.conv_output_size(h, self.kernel, self.stride, self.padding)
        ow = kernels.conv_output_size(w, self.kernel, self.stride, self.padding)
        return oh, ow

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"Conv2D expects (N, {self.in_ch}, H, W) input, got {x.shape}")
        oh, ow = self.output_shape(x.shape[2], x.shape[3])
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {x.shape[2:]} too small for kernel {self.kernel} with padding {self.padding}")
        out = kernels.conv2d_forward(x, self.params["weight"], self.params["bias"], self.stride, self.padding)
        self._cache = (x, out.shape)
        return out

    def backward(self, grad_out):
        x, out_shape = self._need_cache()
        self._check_grad(grad_out, out_shape)
        gx, gw, gb = kernels.conv2d_backward(x, self.params["weight"], grad_out, self.stride, self.padding)
        self.grads = {"weight": gw, "bias": gb}
        return gx


class BatchNorm2D(Layer):
    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm2D expects (N, {self.channels}, H, W) input, got {x.shape}")
        gamma = self.params["gamma"].reshape(1, -1, 1, 1)
        beta = self.params["beta"].reshape(1, -1, 1, 1)
        if self.training:
            if x.shape[0] < 2:
                raise ShapeError("BatchNorm2D in train mode needs a batch of at least 2")
            mean = reduce("mean", x, (0, 2, 3))
            centered = x - mean.reshape(1, -1, 1, 1)
            var = reduce("mean", centered * centered, (0, 2, 3))
            m = self.momentum
            # in place: callers may hold references to the buffer arrays
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = m * rm + (1 - m) * mean
            rv[...] = m * rv + (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
            centered = x - mean.reshape(1, -1, 1, 1)
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = centered * inv_std.reshape(1, -1, 1, 1)
        self._cache = (xhat, inv_std, self.training)
        return (gamma * xhat + beta).astype(x.dtype, copy=False)

    def backward(self, grad_out):
        xhat, inv_std, was_training = self._need_cache()
        self._check_grad(grad_out, xhat.shape)
        gamma = self.params["gamma"].reshape(1, -1, 1, 1)
        g_beta = reduce("sum", grad_out, (0, 2, 3))
        g_gamma = reduce("sum", grad_out * xhat, (0, 2, 3))
        self.grads = {"gamma": g_gamma, "beta": g_beta}
        scale = gamma * inv_std.reshape(1, -1, 1, 1)
        if not was_training:
            return grad_out * scale
        count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
        # batch mean and variance both depend on x
        mean_g = (g_beta / count).reshape(1, -1, 1, 1)
        mean_gx = (g_gamma / count).reshape(1, -1, 1, 1)
        return scale * (grad_out - mean_g - xhat * mean_gx)


class MaxPool2D(Layer):
    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window = window
        self.stride = stride

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2D expects rank-4 input, got {x.shape}")
        if x.shape[2] < self.window or x.shape[3] < self.window:
            raise ShapeError(f"spatial extent {x.shape[2:]} smaller than pooling window {self.window}")
        out, argmax = kernels.maxpool2d_forward(x, self.window, self.stride)
        self._cache = (x.shape, argmax)
        return out

    def backward(self, grad_out):
        in_shape, argmax = self._need_cache()
        self._check_grad(grad_out, argmax.shape)
        return kernels.maxpool2d_backward(grad_out, argmax, in_shape)

    def kink_state(self):
        return None if self._cache is None else self._cache[1]


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = he_normal(rng, (in_features, out_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Dense expects (N, {self.in_features}) input, got {x.shape}")
        self._cache = x
        return add(matmul(x, self.params["weight"]), self.params["bias"])

    def backward(self, grad_out):
        x = self._need_cache()
        self._check_grad(grad_out, (x.shape[0], self.out_features))
        self.grads = {
            "weight": matmul(x.T, grad_out),
            "bias": reduce("sum", grad_out, 0),
        }
        return matmul(grad_out, self.params["weight"].T)


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return relu(x)

    def backward(self, grad_out):
        mask = self._need_cache()
        self._check_grad(grad_out, mask.shape)
        # derivative at exactly 0 is taken as 0
        return grad_out * mask

    def kink_state(self):
        return self._cache


class Sigmoid(Layer):
    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, grad_out):
        y = self._need_cache()
        self._check_grad(grad_out, y.shape)
        return grad_out * y * (1 - y)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1).copy()

    def backward(self, grad_out):
        shape = self._need_cache()
        return unflatten(grad_out, shape)


def flatten(x):
    return x.reshape(x.shape[0], -1).copy()


def unflatten(x, shape):
    return x.reshape(shape).copy()
