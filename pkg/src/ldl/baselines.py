"""Comparison models: naive reconstruction bank, logistic regression and a ReLU MLP.

All argmin/argmax decisions break ties toward the lowest class index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ldl import kernels
from ldl.data import LabeledSet
from ldl.distill import TrainConfig
from ldl.linalg import ShapeError, gaussian_matrix, make_rng
from ldl.optim import Optimizer

__all__ = [
    "NaiveBank",
    "naive_train",
    "naive_scores",
    "naive_classify",
    "LogRegModel",
    "softmax",
    "logreg_loss_and_grads",
    "logreg_train",
    "logreg_predict",
    "MlpModel",
    "MLP_GRID",
    "mlp_init",
    "mlp_loss_and_grads",
    "mlp_train",
    "mlp_predict",
    "BASELINE_DEFAULTS",
]

BASELINE_DEFAULTS = {
    "naive": TrainConfig(learning_rate=1e-3, optimizer="sgd", m2ord_learning_rate=None),
    "logreg": TrainConfig(learning_rate=1e-3, optimizer="sgd", m2ord_learning_rate=None),
    "mlp": TrainConfig(learning_rate=1e-3, optimizer="adam", m2ord_learning_rate=None),
}

#: Hidden-layer configurations searched for the MLP baseline.
MLP_GRID = ((64,), (256,), (1024,), (64, 64), (256, 256), (1024, 1024))


def _shuffled_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# Naive reconstruction bank

@dataclass
class NaiveBank:
    """Per-class (d, d) maps, each trained to reproduce its own class's inputs."""

    predictors: list[np.ndarray]

    def __post_init__(self):
        d = self.predictors[0].shape[0]
        for p in self.predictors:
            if p.shape != (d, d):
                raise ShapeError(f"naive predictors must all be ({d}, {d}), got {p.shape}")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return naive_classify(self, x)


def naive_train(data: LabeledSet, cfg: TrainConfig, rng: np.random.Generator,
                bank: NaiveBank | None = None) -> NaiveBank:
    """Minimize ``mean ||P_c x - x||^2`` over class-``c`` samples.

    Starts from Gaussian predictors, or continues training ``bank`` in place.
    """
    d = data.dim
    if bank is None:
        bank = NaiveBank([gaussian_matrix(d, d, rng) for _ in range(data.n_classes)])
    elif len(bank.predictors) != data.n_classes or bank.predictors[0].shape[0] != d:
        raise ShapeError(f"bank of {len(bank.predictors)} ({bank.predictors[0].shape}) predictors "
                         f"does not fit {data.n_classes} classes in dimension {d}")
    shuffle = make_rng(cfg.seed)
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    for _ in range(cfg.epochs):
        for c, p in enumerate(bank.predictors):
            xc = data.of_class(c)
            if not xc.shape[1]:
                continue
            if opt.kind == "sgd" and cfg.batch_size == 1:
                rows = np.ascontiguousarray(xc.T)
                kernels.sgd_single_sweep(p, rows, rows, shuffle.permutation(xc.shape[1]), opt.learning_rate)
                continue
            for idx in _shuffled_batches(xc.shape[1], cfg.batch_size, shuffle):
                xb = xc[:, idx]
                grad = (2.0 / xb.shape[1]) * (p @ xb - xb) @ xb.T
                opt.step([p], [grad])
    return bank


def naive_scores(bank: NaiveBank, x: np.ndarray) -> np.ndarray:
    """``||P_c x - x||^2`` for each class; (C,) for one sample, (C, N) for columns."""
    single = x.ndim == 1
    xs = x[:, None] if single else x
    if xs.shape[0] != bank.predictors[0].shape[1]:
        raise ShapeError(f"input dimension {xs.shape[0]} != predictor dimension {bank.predictors[0].shape[1]}")
    out = np.empty((len(bank.predictors), xs.shape[1]))
    eye = np.eye(xs.shape[0])
    for c, p in enumerate(bank.predictors):
        r = (p - eye) @ xs
        out[c] = np.einsum("ij,ij->j", r, r)
    return out[:, 0] if single else out


def naive_classify(bank: NaiveBank, x: np.ndarray):
    return np.argmin(naive_scores(bank, x), axis=0)


# ---------------------------------------------------------------------------
# Logistic regression

def softmax(z: np.ndarray, axis: int = 0) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class LogRegModel:
    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ x + (self.bias[:, None] if x.ndim == 2 else self.bias)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x), axis=0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return logreg_predict(self, x)


def logreg_loss_and_grads(m: LogRegModel, x: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy over the columns of ``x`` and its gradients."""
    n = x.shape[1]
    p = softmax(m.logits(x), axis=0)
    loss = -float(np.mean(np.log(p[y, np.arange(n)])))
    p[y, np.arange(n)] -= 1.0
    p /= n
    return loss, [p @ x.T, p.sum(axis=1)]


def logreg_train(data: LabeledSet, cfg: TrainConfig, rng: np.random.Generator) -> LogRegModel:
    """Gradient descent on softmax cross-entropy from zero weights."""
    del rng  # zero initialization; kept for a uniform baseline signature
    m = LogRegModel(np.zeros((data.n_classes, data.dim)), np.zeros(data.n_classes))
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    shuffle = make_rng(cfg.seed)
    for _ in range(cfg.epochs):
        for idx in _shuffled_batches(len(data), cfg.batch_size, shuffle):
            _, grads = logreg_loss_and_grads(m, data.x[:, idx], data.y[idx])
            opt.step([m.weights, m.bias], grads)
    return m


def logreg_predict(m: LogRegModel, x: np.ndarray):
    return np.argmax(m.logits(x), axis=0)


# ---------------------------------------------------------------------------
# MLP

@dataclass
class MlpModel:
    """ReLU network with one or two hidden layers and a softmax output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not 2 <= len(self.weights) <= 3 or len(self.biases) != len(self.weights):
            raise ValueError("an MLP has one or two hidden layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] == 0 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} has a bad shape {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} does not chain onto layer {i - 1}")

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _mlp_forward(self, x)[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return mlp_predict(self, x)


def mlp_init(d: int, hidden, n_classes: int, rng: np.random.Generator) -> MlpModel:
    """He-normal weights and zero biases. ``hidden`` lists one or two positive widths."""
    hidden = tuple(int(h) for h in hidden)
    if not 1 <= len(hidden) <= 2 or min(hidden) < 1:
        raise ValueError(f"MLP needs one or two hidden layers of positive width, got {hidden}")
    dims = (d,) + hidden + (n_classes,)
    weights = [rng.standard_normal((dims[i + 1], dims[i])) * np.sqrt(2.0 / dims[i]) for i in range(len(dims) - 1)]
    return MlpModel(weights, [np.zeros(n) for n in dims[1:]])


def _mlp_forward(m: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = w @ acts[-1] + b[:, None]
        acts.append(z if i == len(m.weights) - 1 else np.maximum(z, 0.0))
    return acts


def mlp_loss_and_grads(m: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and gradients ordered like :attr:`MlpModel.params`."""
    n = x.shape[1]
    acts = _mlp_forward(m, x)
    p = softmax(acts[-1], axis=0)
    loss = -float(np.mean(np.log(p[y, np.arange(n)])))
    p[y, np.arange(n)] -= 1.0
    back = p / n
    grads = []
    for i in range(len(m.weights) - 1, -1, -1):
        grads.append(back.sum(axis=1))
        grads.append(back @ acts[i].T)
        if i:
            back = (m.weights[i].T @ back) * (acts[i] > 0.0)
    return loss, grads[::-1]


def mlp_train(data: LabeledSet, cfg: TrainConfig, rng: np.random.Generator, hidden=(256,)) -> MlpModel:
    m = mlp_init(data.dim, hidden, data.n_classes, rng)
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    shuffle = make_rng(cfg.seed)
    for _ in range(cfg.epochs):
        for idx in _shuffled_batches(len(data), cfg.batch_size, shuffle):
            _, grads = mlp_loss_and_grads(m, data.x[:, idx], data.y[idx])
            opt.step(m.params, grads)
    return m


def mlp_predict(m: MlpModel, x: np.ndarray):
    xs = x[:, None] if x.ndim == 1 else x
    out = np.argmax(_mlp_forward(m, xs)[-1], axis=0)
    return out[0] if x.ndim == 1 else out
