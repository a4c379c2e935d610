"""Single threshold unit trained with the error-driven perceptron rule.

The unit fires (outputs 1) iff sum_i a_i * w_i > theta. Training only moves
the weights: w_i += C * (t - x) * a_i. The threshold stays fixed.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

BOOLEAN_INPUTS = ((0, 0), (0, 1), (1, 0), (1, 1))

GATES = {
    "and": (0, 0, 0, 1),
    "or": (0, 1, 1, 1),
    "nand": (1, 1, 1, 0),
    "xor": (0, 1, 1, 0),
}

# A threshold unit without a trainable bias can only output 1 on (0, 0) when
# theta < 0, so NAND needs a negative threshold.
DEFAULT_THETA = {"and": 0.5, "or": 0.5, "nand": -0.5, "xor": 0.5}


@dataclass
class Perceptron:
    weights: np.ndarray
    theta: float = 0.0
    lr: float = 0.1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).copy()
        if self.lr <= 0:
            raise ValueError("learning rate C must be positive")

    @classmethod
    def zeros(cls, n_inputs, theta=0.0, lr=0.1):
        return cls(np.zeros(n_inputs), theta, lr)

    def _check(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != self.weights.shape:
            raise ShapeError(f"expected {self.weights.size} inputs, got {a.size}")
        return a

    def forward(self, a):
        a = self._check(a)
        return int(float(a @ self.weights) > self.theta)

    def update(self, a, t):
        """One learning step on (a, t); returns the error term t - x."""
        a = self._check(a)
        err = t - self.forward(a)
        if err:
            self.weights = self.weights + self.lr * err * a
        return err

    def truth_table(self, inputs=BOOLEAN_INPUTS):
        return tuple(self.forward(a) for a in inputs)


@dataclass
class TrainReport:
    converged: bool
    epochs: int
    best_accuracy: float
    history: list = field(default_factory=list)


def accuracy(p, dataset):
    return sum(p.forward(a) == t for a, t in dataset) / len(dataset)


def train(p, dataset, max_epochs=100):
    """Sweep ``dataset`` in order until an epoch makes no mistake or ``max_epochs`` pass.

    ``best_accuracy`` is the best whole-dataset accuracy seen after any epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty training set")
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    best = accuracy(p, dataset)
    history = []
    for epoch in range(1, max_epochs + 1):
        mistakes = 0
        for a, t in dataset:
            mistakes += p.update(a, t) != 0
        acc = accuracy(p, dataset)
        history.append(acc)
        best = max(best, acc)
        if mistakes == 0:
            return TrainReport(True, epoch, best, history)
    return TrainReport(False, max_epochs, best, history)


def gate_dataset(gate):
    try:
        targets = GATES[gate]
    except KeyError:
        raise ValueError(f"unknown gate {gate!r}; choose from {sorted(GATES)}") from None
    return list(zip(BOOLEAN_INPUTS, targets))


def train_gate(gate, lr=0.1, theta=None, max_epochs=1000):
    theta = DEFAULT_THETA[gate] if theta is None else theta
    p = Perceptron.zeros(2, theta=theta, lr=lr)
    return p, train(p, gate_dataset(gate), max_epochs)
