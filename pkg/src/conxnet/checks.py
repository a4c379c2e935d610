"""Gradient-check suite over every layer type and a small assembled ConXNet."""
import numpy as np

from .layers import BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2D, ReLU, Sigmoid
from .model import ConXNet, ModelConfig
from .optim import gradient_check

TOLERANCE = 1e-4
STEP = 1e-5


def _tie_free(rng, shape):
    # distinct values spaced well apart from each other and from zero
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 0.5) / n * 4.0 - 2.0
    return vals.reshape(shape) + rng.uniform(-0.1, 0.1, size=shape) / n


def layer_cases(size=8, seed=0):
    """(name, layer, input) triples covering every layer type in double precision."""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    bn_eval = BatchNorm2D(3, dtype=f64)
    bn_eval.params["gamma"][:] = rng.uniform(0.5, 1.5, 3)
    bn_eval.params["beta"][:] = rng.normal(size=3)
    bn_eval.buffers["running_mean"][:] = rng.normal(size=3)
    bn_eval.buffers["running_var"][:] = rng.uniform(0.5, 2.0, 3)
    bn_eval.eval()
    bn_train = BatchNorm2D(3, dtype=f64)
    bn_train.params["gamma"][:] = rng.uniform(0.5, 1.5, 3)
    bn_train.params["beta"][:] = rng.normal(size=3)
    conv_s2 = Conv2D(3, 2, kernel=3, stride=2, padding=1, rng=rng, dtype=f64)
    conv_s2.params["bias"][:] = rng.normal(size=2)
    conv = Conv2D(3, 4, kernel=3, stride=1, padding=1, rng=rng, dtype=f64)
    conv.params["bias"][:] = rng.normal(size=4)
    dense = Dense(12, 5, rng=rng, dtype=f64)
    dense.params["bias"][:] = rng.normal(size=5)
    x4 = lambda: rng.normal(size=(2, 3, size, size))
    return [
        ("Conv2D", conv, x4()),
        ("Conv2D(stride=2)", conv_s2, x4()),
        ("BatchNorm2D(train)", bn_train, x4() * 2.0 + 1.0),
        ("BatchNorm2D(eval)", bn_eval, x4()),
        ("MaxPool2D", MaxPool2D(), _tie_free(rng, (2, 3, size, size))),
        ("Dense", dense, rng.normal(size=(4, 12))),
        ("ReLU", ReLU(), _tie_free(rng, (2, 3, 4, 4))),
        ("Sigmoid", Sigmoid(), rng.normal(size=(3, 5)) * 3.0),
        ("Flatten", Flatten(), rng.normal(size=(2, 3, 4, 4))),
    ]


def small_model(size=16, seed=0, filters=(2, 3, 3, 2), hidden=4):
    cfg = ModelConfig(input_size=(size, size), block_filters=filters, dense_hidden=hidden, seed=seed)
    model = ConXNet(cfg, dtype=np.float64)
    # non-trivial affine BN parameters so their gradients are exercised
    rng = np.random.default_rng(seed + 1)
    for name, p in model.parameters().items():
        if name.endswith(".gamma"):
            p[:] = rng.uniform(0.5, 1.5, p.shape)
        elif name.endswith((".beta", ".bias")):
            p[:] = rng.normal(scale=0.5, size=p.shape)
    return model.train()


def run_suite(size=16, seed=0, max_samples=200, step=STEP):
    """Gradient-check every layer type and a small ConXNet; returns [(name, report)]."""
    results = []
    for name, layer, x in layer_cases(size=max(4, size // 2), seed=seed):
        results.append((name, gradient_check(layer, x, step=step, max_samples=max_samples, seed=seed)))
    model = small_model(size=size, seed=seed)
    x = np.random.default_rng(seed + 2).random((4, 1, size, size))
    results.append((f"ConXNet({size}x{size})", gradient_check(model, x, step=step, max_samples=max_samples, seed=seed)))
    return results
