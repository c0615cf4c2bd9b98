"""One-to-many distillation (O2MD), many-to-one random distillation (M2ORD) and
their bidirectional alternation.

O2MD trains predictor ``c`` to match the frozen target on class-``c`` samples:

    L(P_c) = (1/N_c) sum_i ||P_c x_i - Q x_i||^2

M2ORD trains the target to match, on each sample, the frozen teacher of that
sample's class:

    L(Q) = (1/N) sum_i ||Q x_i - T_{y_i} x_i||^2

Bidirectional training starts from predictors equal to an orthonormal teacher
bank and runs an alternation schedule of M2ORD and O2MD passes every epoch.
During its M2ORD passes the *current* predictors act as the teachers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ldl import kernels
from ldl.data import LabeledSet
from ldl.linalg import ShapeError, make_rng
from ldl.model import (
    LinearNet,
    PredictorBank,
    TeacherBank,
    class_scores,
    forward,
    init_from_teachers,
    init_predictor_bank,
    loss_and_grads,
    make_target,
    make_teacher_bank,
)
from ldl.optim import OPTIMIZER_KINDS, Optimizer

__all__ = [
    "PHASES",
    "TrainConfig",
    "LossRecord",
    "TrainedModel",
    "o2md_epoch",
    "m2ord_epoch",
    "o2md_loss",
    "m2ord_loss",
    "bidirectional_train",
    "fit_o2md",
    "fit_bidirectional",
]

PHASES = ("m2ord", "o2md")
DEFAULT_SCHEDULE = (("m2ord", 1), ("o2md", 1))


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters shared by the distillation methods and baselines.

    ``m2ord_learning_rate`` applies to the target during M2ORD passes; ``None``
    falls back to ``learning_rate``. ``schedule`` is the per-epoch sequence of
    ``(phase, passes)`` pairs.
    """

    epochs: int = 10
    learning_rate: float = 1e-3
    m2ord_learning_rate: float | None = 1e-4
    optimizer: str = "sgd"
    schedule: tuple = DEFAULT_SCHEDULE
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.m2ord_learning_rate is not None and not self.m2ord_learning_rate > 0:
            raise ValueError("m2ord_learning_rate must be positive")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        sched = tuple((str(p).lower(), int(n)) for p, n in self.schedule)
        if not sched:
            raise ValueError("the alternation schedule is empty")
        for phase, n in sched:
            if phase not in PHASES or n < 0:
                raise ValueError(f"bad schedule entry ({phase!r}, {n})")
        object.__setattr__(self, "schedule", sched)

    def optimizer_for(self, phase: str) -> Optimizer:
        lr = self.learning_rate
        if phase == "m2ord" and self.m2ord_learning_rate is not None:
            lr = self.m2ord_learning_rate
        return Optimizer(self.optimizer, lr)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    phase: str
    class_or_target: str
    mean_loss: float


@dataclass
class TrainedModel:
    bank: PredictorBank
    target: LinearNet
    history: list[LossRecord] = field(default_factory=list)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return class_scores(self.bank, self.target, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmin returns the first minimum: ties go to the lowest class index
        return np.argmin(self.scores(x), axis=0)


# ---------------------------------------------------------------------------

def _sweep(net: LinearNet, x: np.ndarray, t: np.ndarray, order: np.ndarray,
           opt: Optimizer, batch_size: int) -> None:
    """Visit columns of ``x``/``t`` in ``order`` and update ``net`` after each batch."""
    if opt.kind == "sgd" and batch_size == 1 and len(net.layers) <= 2:
        rows_x = np.ascontiguousarray(x.T)
        rows_t = np.ascontiguousarray(t.T)
        if len(net.layers) == 1:
            kernels.sgd_single_sweep(net.layers[0], rows_x, rows_t, order, opt.learning_rate)
        else:
            kernels.sgd_two_layer_sweep(net.layers[0], net.layers[1], rows_x, rows_t, order,
                                        opt.learning_rate)
        return
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        _, grads = loss_and_grads(net, x[:, idx], t[:, idx])
        opt.step(net.layers, grads)


def _order(n: int, rng: np.random.Generator | None) -> np.ndarray:
    return rng.permutation(n) if rng is not None else np.arange(n)


def _check_data(data: LabeledSet, in_dim: int, n_classes: int) -> None:
    if data.dim != in_dim:
        raise ShapeError(f"data dimension {data.dim} != network input dimension {in_dim}")
    if int(data.y.max()) >= n_classes:
        raise ValueError(f"labels reach {int(data.y.max())} but only {n_classes} classes are modeled")


def _teacher_matrices(teachers) -> list:
    if isinstance(teachers, TeacherBank):
        return [LinearNet([t]) for t in teachers.teachers]
    if isinstance(teachers, PredictorBank):
        return teachers.predictors
    return [t if isinstance(t, LinearNet) else LinearNet([t]) for t in teachers]


def _teacher_outputs(teachers: list, data: LabeledSet, out_dim: int) -> np.ndarray:
    out = np.empty((out_dim, len(data)))
    for c, net in enumerate(teachers):
        mask = data.y == c
        if mask.any():
            out[:, mask] = forward(net, data.x[:, mask])
    return out


def o2md_loss(bank: PredictorBank, target: LinearNet, data: LabeledSet, per_class: bool = False):
    """Mean of ``||P_{y_i} x_i - Q x_i||^2`` over ``data``; optionally per class as well."""
    _check_data(data, bank.in_dim, bank.n_classes)
    q = forward(target, data.x)
    sq = np.empty(len(data))
    for c, p in enumerate(bank.predictors):
        mask = data.y == c
        if mask.any():
            r = forward(p, data.x[:, mask]) - q[:, mask]
            sq[mask] = np.sum(r * r, axis=0)
    mean = float(np.mean(sq))
    if not per_class:
        return mean
    return mean, {c: float(np.mean(sq[data.y == c])) for c in range(bank.n_classes) if (data.y == c).any()}


def m2ord_loss(target: LinearNet, teachers, data: LabeledSet) -> float:
    """Mean of ``||Q x_i - T_{y_i} x_i||^2`` over ``data``."""
    nets = _teacher_matrices(teachers)
    _check_data(data, target.in_dim, len(nets))
    r = forward(target, data.x) - _teacher_outputs(nets, data, target.out_dim)
    return float(np.sum(r * r)) / len(data)


def o2md_epoch(bank: PredictorBank, target: LinearNet, data: LabeledSet, opt: Optimizer,
               rng: np.random.Generator | None = None, batch_size: int = 1) -> float:
    """One pass of O2MD over ``data``; only predictor ``y_i`` sees sample ``i``.

    The target is read but never modified. Samples within each class are
    visited in a fresh random order when ``rng`` is given. Returns the
    dataset loss evaluated after the pass.
    """
    _check_data(data, bank.in_dim, bank.n_classes)
    if target.in_dim != bank.in_dim or target.out_dim != bank.out_dim:
        raise ShapeError(f"target maps {target.in_dim}->{target.out_dim}, "
                         f"predictors map {bank.in_dim}->{bank.out_dim}")
    q = forward(target, data.x)
    for c, p in enumerate(bank.predictors):
        mask = data.y == c
        n_c = int(mask.sum())
        if n_c:
            _sweep(p, data.x[:, mask], q[:, mask], _order(n_c, rng), opt, batch_size)
    return o2md_loss(bank, target, data)


def m2ord_epoch(target: LinearNet, teachers, data: LabeledSet, opt: Optimizer,
                rng: np.random.Generator | None = None, batch_size: int = 1) -> float:
    """One pass of M2ORD: the target imitates the teacher of each sample's class.

    ``teachers`` may be a :class:`TeacherBank`, a :class:`PredictorBank` or a
    list of matrices; it is never modified. Returns the dataset loss after
    the pass.
    """
    nets = _teacher_matrices(teachers)
    _check_data(data, target.in_dim, len(nets))
    t = _teacher_outputs(nets, data, target.out_dim)
    _sweep(target, data.x, t, _order(len(data), rng), opt, batch_size)
    return m2ord_loss(target, nets, data)


def bidirectional_train(bank: PredictorBank, target: LinearNet, data: LabeledSet,
                        cfg: TrainConfig, test_data: LabeledSet | None = None) -> TrainedModel:
    """Run ``cfg.epochs`` epochs of the alternation schedule, updating ``bank`` and ``target`` in place.

    Each M2ORD pass trains the target against the current predictors; each
    O2MD pass trains the predictors against the current target. The history
    holds one ``"target"`` row per M2ORD pass and one row per class per O2MD
    pass. With ``test_data`` it also records the O2MD loss on that set before
    training (epoch 0) and after every epoch, under phase ``"test"``.
    """
    rng = make_rng(cfg.seed)
    opts = {phase: cfg.optimizer_for(phase) for phase in PHASES}
    history: list[LossRecord] = []

    def log_test(epoch):
        if test_data is not None:
            history.append(LossRecord(epoch, "test", "all", o2md_loss(bank, target, test_data)))

    log_test(0)
    for epoch in range(1, cfg.epochs + 1):
        for phase, passes in cfg.schedule:
            for _ in range(passes):
                if phase == "m2ord":
                    loss = m2ord_epoch(target, bank, data, opts[phase], rng, cfg.batch_size)
                    history.append(LossRecord(epoch, phase, "target", loss))
                else:
                    o2md_epoch(bank, target, data, opts[phase], rng, cfg.batch_size)
                    _, per_class = o2md_loss(bank, target, data, per_class=True)
                    history.extend(LossRecord(epoch, phase, str(c), v) for c, v in per_class.items())
        log_test(epoch)
    return TrainedModel(bank, target, history)


def fit_o2md(data: LabeledSet, output_dim: int, cfg: TrainConfig, rng: np.random.Generator,
             test_data: LabeledSet | None = None) -> TrainedModel:
    """O2MD alone: Gaussian predictors distilled from a frozen random two-layer target."""
    d = data.dim
    target = make_target([d, d, output_dim], rng)
    bank = init_predictor_bank(data.n_classes, [d, output_dim], rng)
    cfg = replace(cfg, schedule=(("o2md", 1),))
    return bidirectional_train(bank, target, data, cfg, test_data)


def fit_bidirectional(data: LabeledSet, output_dim: int, cfg: TrainConfig,
                      rng: np.random.Generator, test_data: LabeledSet | None = None) -> TrainedModel:
    """Bidirectional distillation from predictors initialized to an orthonormal teacher bank."""
    d = data.dim
    teachers = make_teacher_bank(data.n_classes, output_dim, d, rng, pad=True)
    bank = init_from_teachers(teachers)
    target = make_target([d, d, output_dim], rng)
    return bidirectional_train(bank, target, data, cfg, test_data)
