"""ConXNet: four Conv -> ReLU -> BatchNorm -> MaxPool blocks and a dense head."""
import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BatchIterator, to_arrays
from .errors import CheckpointError, NumericalError, ShapeError
from .layers import BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2D, ReLU, Sigmoid
from .metrics import THRESHOLD, compute_metrics, confusion
from .optim import Adam, bce_loss

log = logging.getLogger(__name__)

N_BLOCKS = 4
POOL_FACTOR = 2**N_BLOCKS


@dataclass
class ModelConfig:
    input_size: tuple = (64, 64)
    block_filters: tuple = (16, 32, 64, 128)
    kernel: int = 3
    dense_hidden: int = 64
    seed: int = 0
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 32

    def __post_init__(self):
        self.input_size = tuple(int(s) for s in self.input_size)
        self.block_filters = tuple(int(f) for f in self.block_filters)
        if len(self.input_size) != 2:
            raise ValueError("input_size must be (height, width)")
        if len(self.block_filters) != N_BLOCKS:
            raise ValueError(f"ConXNet has exactly {N_BLOCKS} blocks, got {len(self.block_filters)} filter counts")
        for s in self.input_size:
            if s < POOL_FACTOR or s % POOL_FACTOR:
                raise ShapeError(f"input size {self.input_size} must be a positive multiple of {POOL_FACTOR}")
        if min(self.block_filters) < 1 or self.dense_hidden < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd so 'same' padding exists")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    @property
    def flatten_width(self):
        h, w = self.input_size
        return self.block_filters[-1] * (h // POOL_FACTOR) * (w // POOL_FACTOR)

    def to_dict(self):
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["block_filters"] = list(self.block_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ConXNet:
    LAST_BLOCK_FEATURES = f"block{N_BLOCKS}.bn"

    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        k = config.kernel
        layers = []
        in_ch = 1
        for i, f in enumerate(config.block_filters, start=1):
            layers += [
                (f"block{i}.conv", Conv2D(in_ch, f, k, stride=1, padding=k // 2, rng=rng, dtype=dtype)),
                (f"block{i}.relu", ReLU()),
                (f"block{i}.bn", BatchNorm2D(f, dtype=dtype)),
                (f"block{i}.pool", MaxPool2D(2, 2)),
            ]
            in_ch = f
        layers += [
            ("flatten", Flatten()),
            ("fc1", Dense(config.flatten_width, config.dense_hidden, rng=rng, dtype=dtype)),
            ("fc1.relu", ReLU()),
            ("fc2", Dense(config.dense_hidden, 1, rng=rng, dtype=dtype)),
            ("sigmoid", Sigmoid()),
        ]
        self.layers = layers
        self._by_name = dict(layers)
        self.training = True
        self.epoch = 0
        self.meta = {}
        self.outputs = {}

    def __getitem__(self, name):
        return self._by_name[name]

    def train(self):
        self.training = True
        for _, layer in self.layers:
            layer.train()
        return self

    def eval(self):
        self.training = False
        for _, layer in self.layers:
            layer.eval()
        return self

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for _, layer in self.layers:
            layer.astype(dtype)
        return self

    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self.layers for pn, p in layer.params.items()}

    def buffers(self):
        return {f"{ln}.{bn}": b for ln, layer in self.layers for bn, b in layer.buffers.items()}

    def gradients(self):
        return {f"{ln}.{pn}": g for ln, layer in self.layers for pn, g in layer.grads.items()}

    def state(self):
        """Parameters and buffers, in layer order."""
        out = {}
        for ln, layer in self.layers:
            for pn, p in layer.params.items():
                out[f"{ln}.{pn}"] = p
            for bn, b in layer.buffers.items():
                out[f"{ln}.{bn}"] = b
        return out

    def kink_states(self):
        return [layer.kink_state() for _, layer in self.layers]

    def _check_input(self, x):
        h, w = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (1, h, w):
            raise ShapeError(f"expected input (N, 1, {h}, {w}), got {x.shape}")
        if self.training and x.shape[0] < 2:
            raise ShapeError("train-mode forward needs a batch of at least 2 (batch normalization)")

    def forward(self, x, upto=None):
        """Run the network; ``upto`` names the last layer to apply (default: all)."""
        x = np.asarray(x, dtype=self.dtype)
        self._check_input(x)
        self.outputs = {}
        for name, layer in self.layers:
            x = layer.forward(x)
            self.outputs[name] = x
            if name == upto:
                break
        return x

    __call__ = forward

    def logits(self, x):
        return self.forward(x, upto="fc2")

    def backward(self, grad, start=None, stop=None):
        """Backpropagate ``grad`` from the output of layer ``start`` (default: top).

        Stops after layer ``stop`` and returns the gradient with respect to its
        input; by default runs to the network input.
        """
        names = [n for n, _ in self.layers]
        hi = names.index(start) if start else len(names) - 1
        lo = names.index(stop) if stop else 0
        for name, layer in reversed(self.layers[lo : hi + 1]):
            grad = layer.backward(grad)
        return grad


def build(config, dtype=np.float32):
    return ConXNet(config, dtype=dtype)


def predict_proba(model, x, batch_size=64):
    """Eval-mode probabilities for an (N, 1, H, W) array, returned as shape (N,)."""
    model.eval()
    out = [model.forward(x[i : i + batch_size])[:, 0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=model.dtype)


def evaluate(model, x, y):
    return compute_metrics(confusion(predict_proba(model, x), y, THRESHOLD))


def accuracy(model, x, y):
    return evaluate(model, x, y).accuracy


@dataclass
class LogRow:
    epoch: int
    loss: float
    test_accuracy: float


@dataclass
class TrainResult:
    log: list = field(default_factory=list)

    @property
    def final(self):
        return self.log[-1]


LOG_FIELDS = ("epoch", "loss", "test_accuracy")


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r.epoch, repr(float(r.loss)), repr(float(r.test_accuracy))])


def train(model, split, config=None, log_path=None, on_epoch=None):
    """Train ``model`` with BCE + Adam on ``split.train``; evaluate on ``split.test`` each epoch."""
    config = model.config if config is None else config
    if not split.train or not split.test:
        raise ValueError("both train and test splits must be non-empty")
    x_tr, y_tr = to_arrays(split.train, model.dtype)
    x_te, y_te = to_arrays(split.test, model.dtype)
    y_tr_col = y_tr.reshape(-1, 1).astype(model.dtype)
    params = model.parameters()
    opt = Adam(lr=config.lr)
    batches = BatchIterator(len(x_tr), config.batch_size, seed=config.seed)
    result = TrainResult()
    for epoch in range(1, config.epochs + 1):
        model.train()
        total = 0.0
        seen = 0
        for b, idx in enumerate(batches.epoch(epoch)):
            out = model.forward(x_tr[idx])
            lv = bce_loss(out, y_tr_col[idx])
            if not np.isfinite(lv.value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(lv.grad)
            opt.step(params, model.gradients())
            total += lv.value * len(idx)
            seen += len(idx)
        row = LogRow(epoch, total / seen, accuracy(model, x_te, y_te))
        result.log.append(row)
        model.epoch += 1
        log.info("epoch %d loss %.4f test_acc %.4f", row.epoch, row.loss, row.test_accuracy)
        if log_path is not None:
            write_log(result.log, log_path)
        if on_epoch is not None:
            on_epoch(row)
    model.eval()
    return result


# ---------------------------------------------------------------------------
# checkpoints
#
# magic (8 bytes) | version u32 | config length u32 | config JSON (utf-8)
# | per tensor until end of file: name length u32, name, rank u32,
# extents u32 x rank, float32 payload. All integers little-endian.

MAGIC = b"CONXNET\x00"
FORMAT_VERSION = 1


def save(model, path, extra=None):
    meta = {"model": model.config.to_dict(), "seed": model.config.seed, "epoch": model.epoch, "extra": extra or {}}
    cfg = json.dumps(meta, sort_keys=True).encode("utf-8")
    state = model.state()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg]
    for name, arr in state.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count):
        return struct.unpack(f"<{count}I", self.take(4 * count))


def load(path):
    """Read a checkpoint written by ``save``; the model comes back in eval mode."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a ConXNet checkpoint (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
        config = ModelConfig.from_dict(meta["model"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"invalid embedded config: {e}") from e
    model = ConXNet(config)
    state = model.state()
    seen = set()
    while r.pos < len(r.buf):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = r.u32s(rank)
        if name not in state:
            raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
        if name in seen:
            raise CheckpointError(f"tensor {name!r} appears twice")
        if shape != state[name].shape:
            raise CheckpointError(f"shape mismatch for {name!r}: file has {shape}, config implies {state[name].shape}")
        n = int(np.prod(shape)) if shape else 1
        state[name][...] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        seen.add(name)
    missing = set(state) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    model.epoch = int(meta.get("epoch", 0))
    model.meta = meta.get("extra", {})
    return model.eval()
