"""Binary cross-entropy, Adam, and a central-difference gradient checker."""
import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError
from .layers import Layer

BCE_CLAMP = 1e-7


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def bce_loss(pred, target, delta=BCE_CLAMP):
    """Mean binary cross-entropy of probabilities ``pred`` against 0/1 ``target``.

    Predictions are clamped to [delta, 1 - delta] before the log. The returned
    gradient is the derivative of that clamped expression, so it is zero for
    any prediction the clamp moved.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("BCE targets must be 0 or 1")
    n = pred.shape[0]
    p64 = pred.astype(np.float64)
    t = target.astype(np.float64)
    p = np.clip(p64, delta, 1 - delta)
    value = -np.sum(t * np.log(p) + (1 - t) * np.log(1 - p)) / n
    inside = (p64 >= delta) & (p64 <= 1 - delta)
    grad = np.where(inside, (-t / p + (1 - t) / (1 - p)) / n, 0.0)
    return LossValue(float(value), grad.astype(pred.dtype))


class Adam:
    """Adam with bias-corrected moments; moments are created lazily per parameter name."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update every array in ``params`` in place from the matching entry of ``grads``."""
        for name, p in params.items():
            if name not in grads:
                raise ShapeError(f"no gradient for parameter {name!r}")
            if grads[name].shape != p.shape:
                raise ShapeError(f"gradient for {name!r} has shape {grads[name].shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(grads[name])):
                raise NumericalError(f"non-finite gradient for {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)
        return params


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: int = 0

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def passed(self, tol=1e-4):
        return self.max_error <= tol


def relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _default_weights(out, seed, is_layer):
    rng = np.random.default_rng(seed)
    if is_layer:
        return rng.standard_normal(out.shape)
    # models: the BCE gradient against seeded random labels
    t = (rng.random(out.shape) < 0.5).astype(np.float64)
    return bce_loss(out, t).grad.astype(np.float64)


def _linear_loss(r, y0):
    # sum(r * (y - y0)) has the same gradient as sum(r * y) but a value near
    # zero, so forming L(+h) - L(-h) loses no digits to the loss magnitude
    def loss(y):
        return np.sum((y - y0) * r), r.copy()

    return loss


def _kinks_equal(a, b):
    return all(
        (x is None and y is None) or (x is not None and y is not None and np.array_equal(x, y))
        for x, y in zip(a, b)
    )


def _bind(target):
    if isinstance(target, Layer):
        return target.params, lambda: target.grads, target.buffers, lambda: [target.kink_state()]
    return target.parameters(), target.gradients, target.buffers(), target.kink_states


def gradient_check(target, x, step=1e-5, max_samples=200, seed=0, loss=None, check_input=True,
                   probe_dtype=np.longdouble):
    """Compare analytic gradients of ``target`` with central differences.

    ``target`` is a ``Layer`` or a model exposing ``parameters()``,
    ``gradients()``, ``buffers()`` and ``kink_states()``; it must hold float64
    parameters. The analytic pass runs on ``target`` itself. The probes run on
    a copy cast to ``probe_dtype`` (extended precision where the platform has
    it), which keeps rounding noise far below the tolerance even for tiny
    gradient entries.

    The scalar loss is sum(r * y) for a fixed weight array r: seeded normal
    for layers, the BCE gradient against seeded random labels for models.
    ``loss`` may instead be a callable mapping an output to
    ``(value, dvalue/doutput)``. Probes that flip a ReLU mask or a pooling
    argmax are discarded and another element is drawn instead.
    """
    params, get_grads, buffers, _ = _bind(target)
    x = np.array(x, dtype=np.float64)
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradient_check needs float64 parameters; {name!r} is {p.dtype}")
    saved_buffers = {k: v.copy() for k, v in buffers.items()}
    shadow = copy.deepcopy(target).astype(probe_dtype)
    p_params, _, p_buffers, p_kinks = _bind(shadow)
    px = x.astype(probe_dtype)

    out = target.forward(x)
    p_out = shadow.forward(px)
    if loss is None:
        r = _default_weights(out, seed, isinstance(target, Layer))
        value, dout = np.sum(r * out), r
        loss = _linear_loss(r, p_out.copy())
    else:
        value, dout = loss(out)
    if not np.isfinite(value):
        raise NumericalError("loss is not finite at the base point")
    grad_in = target.backward(dout)
    analytic = {k: v.copy() for k, v in get_grads().items()}
    base_kinks = [None if k is None else k.copy() for k in p_kinks()]
    p_saved = {k: v.copy() for k, v in p_buffers.items()}

    def probe():
        val, _ = loss(shadow.forward(px))
        if not np.isfinite(val):
            raise NumericalError("loss became non-finite while probing")
        for k, v in p_saved.items():
            p_buffers[k][...] = v
        return val, p_kinks()

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    arrays = [(name, p_params[name], analytic[name]) for name in params]
    if check_input:
        arrays.append(("input", px, grad_in))
    for name, arr, ana in arrays:
        flat = arr.reshape(-1)
        order = rng.permutation(flat.size)
        worst = 0.0
        used = 0
        for idx in order:
            if used >= max_samples:
                break
            orig = flat[idx]
            flat[idx] = orig + step
            lp, kp = probe()
            flat[idx] = orig - step
            lm, km = probe()
            flat[idx] = orig
            if not (_kinks_equal(kp, base_kinks) and _kinks_equal(km, base_kinks)):
                report.skipped += 1
                continue
            numeric = float((lp - lm) / (2 * step))
            worst = max(worst, relative_error(float(ana.reshape(-1)[idx]), numeric))
            used += 1
        report.errors[name] = worst
        report.checked[name] = used

    for k, v in saved_buffers.items():
        buffers[k][...] = v
    return report
