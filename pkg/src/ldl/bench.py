"""Few-shot episode sampling, per-trial training/evaluation and result aggregation.

Trial seeding: the seed of trial ``i`` in cell ``(way, shot)`` is the first
64-bit word of ``SeedSequence(master_seed, spawn_key=(way, shot, i))``. Every
method and output size at the same ``(way, shot, i)`` therefore sees the same
episode, and any trial can be rerun in isolation from its reported seed.
From the trial seed, ``SeedSequence(seed).spawn(2)`` yields the episode
generator and the model generator.
"""
from __future__ import annotations

import csv
import io
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ldl import baselines
from ldl.data import LabeledSet, load_mnist, load_omniglot
from ldl.distill import TrainConfig, TrainedModel, fit_bidirectional, fit_o2md
from ldl.linalg import make_rng
from ldl.model import (
    CheckpointError,
    LinearNet,
    PredictorBank,
    class_scores,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "METHODS",
    "LDL_DEFAULTS",
    "InsufficientDataError",
    "Episode",
    "TrialReport",
    "SummaryRow",
    "BenchConfig",
    "BenchResult",
    "trial_seed",
    "sample_episode",
    "class_scores",
    "classify",
    "fit_method",
    "accuracy",
    "save_model",
    "load_model",
    "restrict_to_classes",
    "run_trial",
    "run_benchmark",
    "run_mnist_benchmark",
    "run_omniglot_benchmark",
    "aggregate",
    "write_results_csv",
    "write_summary_csv",
    "write_history_csv",
    "format_summary",
]

METHODS = ("naive", "logreg", "mlp", "o2md", "bd")
LDL_DEFAULTS = TrainConfig()
MNIST_SHOTS = (1, 10, 50, 100, 200)
OMNIGLOT_WAYS = (3, 5, 10)
OMNIGLOT_SHOTS = (1, 3, 5, 10)


class InsufficientDataError(ValueError):
    """The pool cannot supply the requested ways, shots or queries."""


@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    support: LabeledSet
    query: LabeledSet | None
    classes: np.ndarray  # original pool label of each relabeled class
    support_index: np.ndarray
    query_index: np.ndarray
    seed: int | None = None


@dataclass(frozen=True)
class TrialReport:
    method: str
    way: int
    shot: int
    output_dim: int
    trial: int
    seed: int
    correct: int
    total: int
    seconds: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass(frozen=True)
class SummaryRow:
    method: str
    way: int
    shot: int
    output_dim: int
    mean_acc: float
    std_acc: float
    trials: int


def trial_seed(master_seed: int, way: int, shot: int, trial: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(way, shot, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_episode(pool: LabeledSet, way: int, shot: int, query_per_class: int,
                   rng: np.random.Generator, seed: int | None = None) -> Episode:
    """Draw ``way`` classes and, within each, ``shot + query_per_class`` distinct samples.

    Selected classes are relabeled ``0..way-1`` in increasing order of their
    pool label. ``query_per_class == 0`` yields an episode without a query set.
    """
    if way < 1 or shot < 1 or query_per_class < 0:
        raise ValueError("way and shot must be positive and query_per_class non-negative")
    need = shot + query_per_class
    counts = np.bincount(pool.y, minlength=pool.n_classes)
    eligible = np.flatnonzero(counts >= need)
    if len(eligible) < way:
        raise InsufficientDataError(
            f"{way}-way episodes need {way} classes with >= {need} samples; pool has {len(eligible)}"
        )
    classes = np.sort(rng.choice(eligible, size=way, replace=False))
    sup, qry = [], []
    for c in classes:
        picked = rng.choice(np.flatnonzero(pool.y == c), size=need, replace=False)
        sup.append(picked[:shot])
        qry.append(picked[shot:])
    sup_idx = np.concatenate(sup)
    qry_idx = np.concatenate(qry)
    support = pool.subset(sup_idx, n_classes=way, labels=np.repeat(np.arange(way), shot))
    query = None
    if query_per_class:
        query = pool.subset(qry_idx, n_classes=way, labels=np.repeat(np.arange(way), query_per_class))
    return Episode(way, shot, support, query, classes, sup_idx, qry_idx, seed)


def classify(bank, target, x: np.ndarray) -> np.ndarray:
    """Argmin of :func:`class_scores`, ties to the lowest class index."""
    return np.argmin(class_scores(bank, target, x), axis=0)


def restrict_to_classes(data: LabeledSet, classes: np.ndarray) -> LabeledSet:
    """Keep samples whose label is in ``classes`` and relabel them by position."""
    lookup = np.full(data.n_classes, -1)
    lookup[classes] = np.arange(len(classes))
    keep = np.flatnonzero(lookup[data.y] >= 0)
    return data.subset(keep, n_classes=len(classes), labels=lookup[data.y[keep]])


def fit_method(method: str, support: LabeledSet, output_dim: int, cfg: TrainConfig,
               rng: np.random.Generator, mlp_hidden=(256,)):
    """Train ``method`` on ``support``; the returned model has ``predict(x)``."""
    if method == "o2md":
        return fit_o2md(support, output_dim, cfg, rng)
    if method == "bd":
        return fit_bidirectional(support, output_dim, cfg, rng)
    if method == "naive":
        return baselines.naive_train(support, cfg, rng)
    if method == "logreg":
        return baselines.logreg_train(support, cfg, rng)
    if method == "mlp":
        return baselines.mlp_train(support, cfg, rng, hidden=mlp_hidden)
    raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


def accuracy(model, data: LabeledSet) -> tuple[int, int]:
    pred = np.asarray(model.predict(data.x))
    return int(np.sum(pred == data.y)), len(data)


def save_model(path, model) -> None:
    """Write any model returned by :func:`fit_method` as a checkpoint.

    Distillation models store one net per predictor followed by the target.
    Bias vectors are stored as single-column matrices.
    """
    if isinstance(model, TrainedModel):
        nets = [p.layers for p in model.bank.predictors] + [model.target.layers]
        save_checkpoint(path, "ldl", nets)
    elif isinstance(model, baselines.NaiveBank):
        save_checkpoint(path, "naive", [[p] for p in model.predictors])
    elif isinstance(model, baselines.LogRegModel):
        save_checkpoint(path, "logreg", [[model.weights, model.bias[:, None]]])
    elif isinstance(model, baselines.MlpModel):
        save_checkpoint(path, "mlp", [[w, b[:, None]] for w, b in zip(model.weights, model.biases)])
    else:
        raise TypeError(f"cannot checkpoint a {type(model).__name__}")


def load_model(path):
    """Inverse of :func:`save_model`."""
    kind, nets = load_checkpoint(path)
    try:
        if kind == "ldl":
            if len(nets) < 2:
                raise CheckpointError("an ldl checkpoint needs predictors and a target")
            return TrainedModel(PredictorBank([LinearNet(n) for n in nets[:-1]]), LinearNet(nets[-1]))
        if kind == "naive":
            return baselines.NaiveBank([n[0] for n in nets])
        if kind == "logreg":
            (w, b), = nets
            return baselines.LogRegModel(w, b[:, 0])
        return baselines.MlpModel([w for w, _ in nets], [b[:, 0] for _, b in nets])
    except (ValueError, IndexError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"checkpoint of kind {kind!r} has an unexpected layout: {exc}") from exc


@dataclass
class BenchConfig:
    """Resolved benchmark grid and per-method training configurations."""

    dataset: str = "mnist"
    methods: tuple = ("o2md", "bd")
    ways: tuple = (10,)
    shots: tuple = MNIST_SHOTS
    output_dims: tuple = (784,)
    trials: int = 100
    seed: int = 0
    query_per_class: int = 1
    fast: bool = False
    fast_test_size: int = 1000
    jobs: int = 1
    record_time: bool = True
    mlp_hidden: tuple = (256,)
    train: dict = field(default_factory=dict)  # method -> TrainConfig
    checkpoint_dir: str | None = None  # save every trained model here when set

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; valid methods: {', '.join(METHODS)}")
        for name in ("ways", "shots", "output_dims"):
            vals = getattr(self, name)
            if not vals or min(vals) < 1:
                raise ValueError(f"{name} must be a non-empty list of positive integers")
        if self.trials < 1 or self.jobs < 1:
            raise ValueError("trials and jobs must be positive")

    def train_config(self, method: str) -> TrainConfig:
        if method in self.train:
            return self.train[method]
        return baselines.BASELINE_DEFAULTS.get(method, LDL_DEFAULTS)

    def cells(self):
        """Every (method, way, shot, output_dim, trial) task in canonical order."""
        for method in self.methods:
            dims = self.output_dims if method in ("o2md", "bd") else (None,)
            for way in self.ways:
                for shot in self.shots:
                    for k in dims:
                        for t in range(self.trials):
                            yield method, way, shot, k, t


@dataclass
class BenchResult:
    reports: list[TrialReport]
    history: list[tuple]  # (method, way, shot, output_dim, trial, epoch, phase, class_or_target, loss)
    failures: list[tuple]  # (task, traceback text)


# Shared read-only state for worker processes, set before the pool forks.
_SHARED: dict = {}


def run_trial(task, cfg: BenchConfig, pool: LabeledSet, test: LabeledSet | None):
    """Train and evaluate one (method, way, shot, output_dim, trial) cell."""
    method, way, shot, k, trial = task
    seed = trial_seed(cfg.seed, way, shot, trial)
    ep_ss, model_ss = np.random.SeedSequence(seed).spawn(2)
    q = 0 if test is not None else cfg.query_per_class
    episode = sample_episode(pool, way, shot, q, make_rng(ep_ss), seed=seed)
    model_rng = make_rng(model_ss)
    tcfg = replace(cfg.train_config(method), seed=int(model_rng.integers(2**63)))
    output_dim = k if k is not None else pool.dim
    t0 = time.perf_counter()
    model = fit_method(method, episode.support, output_dim, tcfg, model_rng, cfg.mlp_hidden)
    if test is not None:
        eval_set = test if way == test.n_classes else restrict_to_classes(test, episode.classes)
    else:
        eval_set = episode.query
    correct, total = accuracy(model, eval_set)
    seconds = time.perf_counter() - t0 if cfg.record_time else 0.0
    if cfg.checkpoint_dir is not None:
        save_model(Path(cfg.checkpoint_dir) / checkpoint_name(task, output_dim), model)
    report = TrialReport(method, way, shot, output_dim, trial, seed, correct, total, seconds)
    hist = [(method, way, shot, output_dim, trial, r.epoch, r.phase, r.class_or_target, r.mean_loss)
            for r in getattr(model, "history", [])]
    return report, hist


def checkpoint_name(task, output_dim: int) -> str:
    method, way, shot, _, trial = task
    return f"{method}_w{way}_s{shot}_k{output_dim}_t{trial}.ldlm"


def _worker(task):
    try:
        return task, run_trial(task, _SHARED["cfg"], _SHARED["pool"], _SHARED["test"]), None
    except Exception:
        return task, None, traceback.format_exc()


def run_benchmark(cfg: BenchConfig, pool: LabeledSet, test: LabeledSet | None = None) -> BenchResult:
    """Run every cell of ``cfg`` against ``pool`` (support source) and ``test``.

    With ``test`` given every trial is scored on it (MNIST protocol); without
    it each episode draws ``cfg.query_per_class`` queries per class from the
    pool (Omniglot protocol). Trials run in ``cfg.jobs`` worker processes.
    """
    tasks = list(cfg.cells())
    if cfg.checkpoint_dir is not None:
        Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    _SHARED.update(cfg=cfg, pool=pool, test=test)
    try:
        if cfg.jobs == 1:
            outcomes = [_worker(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
                outcomes = list(ex.map(_worker, tasks, chunksize=1))
    finally:
        _SHARED.clear()
    reports, history, failures = [], [], []
    for task, result, err in outcomes:
        if err is not None:
            failures.append((task, err))
            continue
        reports.append(result[0])
        history.extend(result[1])
    reports.sort(key=lambda r: (r.method, r.way, r.shot, r.output_dim, r.trial))
    history.sort(key=lambda h: h[:5])
    return BenchResult(reports, history, failures)


def _fast_subset(test: LabeledSet, size: int, seed: int) -> LabeledSet:
    if size >= len(test):
        return test
    rng = make_rng(np.random.SeedSequence(seed, spawn_key=(0xFA57,)))
    return test.subset(np.sort(rng.choice(len(test), size=size, replace=False)))


def run_mnist_benchmark(cfg: BenchConfig, data_dir=None, train: LabeledSet | None = None,
                        test: LabeledSet | None = None) -> BenchResult:
    """MNIST protocol: support drawn from the train split, scored on the full test split.

    ``cfg.fast`` scores on a fixed ``cfg.fast_test_size`` random subset instead.
    """
    if train is None:
        train = load_mnist(data_dir, "train")
    if test is None:
        test = load_mnist(data_dir, "test")
    if cfg.fast:
        test = _fast_subset(test, cfg.fast_test_size, cfg.seed)
    return run_benchmark(cfg, train, test)


def run_omniglot_benchmark(cfg: BenchConfig, data_dir=None, pool: LabeledSet | None = None) -> BenchResult:
    """Omniglot protocol: episodes from the evaluation pool with ``query_per_class`` queries."""
    if pool is None:
        pool = load_omniglot(data_dir, part="eval")
    return run_benchmark(cfg, pool, None)


def aggregate(reports) -> list[SummaryRow]:
    """Mean and population standard deviation of accuracy per (method, way, shot, output_dim)."""
    groups: dict[tuple, list[float]] = {}
    for r in reports:
        groups.setdefault((r.method, r.way, r.shot, r.output_dim), []).append(r.accuracy)
    rows = []
    for key in sorted(groups):
        acc = np.array(groups[key])
        rows.append(SummaryRow(*key, float(acc.mean()), float(acc.std()), len(acc)))
    return rows


RESULTS_HEADER = ("method", "way", "shot", "output_dim", "trial", "seed", "accuracy", "seconds")
SUMMARY_HEADER = ("method", "way", "shot", "output_dim", "mean_acc", "std_acc", "trials")
HISTORY_HEADER = ("method", "way", "shot", "output_dim", "trial", "epoch", "phase", "class_or_target", "mean_loss")


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_results_csv(path, reports) -> None:
    _write_csv(path, RESULTS_HEADER, (
        (r.method, r.way, r.shot, r.output_dim, r.trial, r.seed, repr(r.accuracy), f"{r.seconds:.6f}")
        for r in reports
    ))


def write_summary_csv(path, rows) -> None:
    _write_csv(path, SUMMARY_HEADER, (
        (s.method, s.way, s.shot, s.output_dim, repr(s.mean_acc), repr(s.std_acc), s.trials) for s in rows
    ))


def write_history_csv(path, history) -> None:
    _write_csv(path, HISTORY_HEADER, (h[:-1] + (repr(h[-1]),) for h in history))


def format_summary(rows) -> str:
    lines = [f"{'method':<8}{'way':>5}{'shot':>6}{'out':>6}{'mean':>9}{'std':>8}{'trials':>8}"]
    for s in rows:
        lines.append(f"{s.method:<8}{s.way:>5}{s.shot:>6}{s.output_dim:>6}"
                     f"{s.mean_acc:>9.4f}{s.std_acc:>8.4f}{s.trials:>8}")
    return "\n".join(lines)


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
