import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_set
from ldl.data import LabeledSet
from ldl.distill import (
    TrainConfig,
    bidirectional_train,
    fit_bidirectional,
    fit_o2md,
    m2ord_epoch,
    m2ord_loss,
    o2md_epoch,
    o2md_loss,
)
from ldl.linalg import ShapeError, make_rng
from ldl.model import (
    LinearNet,
    PredictorBank,
    forward,
    init_from_teachers,
    init_predictor_bank,
    make_target,
    make_teacher_bank,
)
from ldl.optim import Optimizer


def checksum(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def bank_arrays(bank):
    return [w for p in bank.predictors for w in p.layers]


def test_o2md_fixed_point():
    rng = make_rng(0)
    data = synthetic_set(rng, n_classes=2, dim=4)
    target = make_target([4, 3], rng)
    bank = PredictorBank([target.copy(), target.copy()])
    before = [w.copy() for w in bank_arrays(bank)]
    loss = o2md_epoch(bank, target, data, Optimizer("sgd", 0.1), rng)
    # the kernel's dot product and BLAS round differently, so "zero" is a few ulps
    assert loss < 1e-28
    for a, b in zip(before, bank_arrays(bank)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_o2md_fixed_point_generic_path_is_exact():
    rng = make_rng(0)
    data = synthetic_set(rng, n_classes=2, dim=4)
    target = make_target([4, 3], rng)
    bank = PredictorBank([target.copy(), target.copy()])
    before = checksum(bank_arrays(bank))
    assert o2md_epoch(bank, target, data, Optimizer("sgd", 0.1), rng, batch_size=len(data)) == 0.0
    assert checksum(bank_arrays(bank)) == before


def test_m2ord_fixed_point():
    rng = make_rng(1)
    data = synthetic_set(rng, n_classes=1, dim=4)
    target = make_target([4, 2], rng)
    before = target.layers[0].copy()
    assert m2ord_epoch(target, [target.layers[0].copy()], data, Optimizer("sgd", 0.1), rng) < 1e-28
    np.testing.assert_allclose(target.layers[0], before, rtol=0, atol=1e-15)


@pytest.mark.parametrize("backend_lr", [0.1])
def test_single_sample_convergence(backend_lr):
    rng = make_rng(2)
    x = rng.random((4, 1))
    data = LabeledSet(x, np.array([0]), 1)
    target = make_target([4, 4, 3], rng)
    bank = init_predictor_bank(1, [4, 3], rng)
    opt = Optimizer("sgd", backend_lr)
    for _ in range(200):
        loss = o2md_epoch(bank, target, data, opt)
    assert loss < 1e-6
    assert o2md_loss(bank, target, data) < 1e-6


def test_single_sample_convergence_generic_path():
    # batch_size > 1 routes through the minibatch gradient code instead of the kernel
    rng = make_rng(2)
    data = LabeledSet(rng.random((4, 1)), np.array([0]), 1)
    target = make_target([4, 3], rng)
    bank = init_predictor_bank(1, [4, 3], rng)
    opt = Optimizer("sgd", 0.1)
    for _ in range(200):
        loss = o2md_epoch(bank, target, data, opt, batch_size=2)
    assert loss < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_classes=st.integers(2, 5), depth=st.integers(1, 3),
       kind=st.sampled_from(["sgd", "adam"]), batch=st.sampled_from([1, 3]))
def test_class_isolation_and_frozen_target(seed, n_classes, depth, kind, batch):
    rng = make_rng(seed)
    dim = 5
    full = synthetic_set(rng, n_classes=n_classes, per_class=3, dim=dim)
    present = rng.choice(n_classes, size=rng.integers(1, n_classes), replace=False)
    keep = np.flatnonzero(np.isin(full.y, present))
    data = full.subset(keep, n_classes=n_classes)
    target = make_target([dim, 4, 3], rng)
    bank = init_predictor_bank(n_classes, [dim] + [4] * (depth - 1) + [3], rng)
    absent = [c for c in range(n_classes) if c not in present]
    before = {c: checksum(bank.predictors[c].layers) for c in range(n_classes)}
    target_sum = checksum(target.layers)
    o2md_epoch(bank, target, data, Optimizer(kind, 1e-2), rng, batch_size=batch)
    assert checksum(target.layers) == target_sum
    for c in absent:
        assert checksum(bank.predictors[c].layers) == before[c]
    for c in present:
        assert checksum(bank.predictors[c].layers) != before[c]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), as_bank=st.booleans(), batch=st.sampled_from([1, 4]))
def test_m2ord_never_touches_teachers(seed, as_bank, batch):
    rng = make_rng(seed)
    data = synthetic_set(rng, n_classes=3, per_class=3, dim=6)
    tb = make_teacher_bank(3, 2, 6, rng)
    teachers = init_from_teachers(tb) if as_bank else tb
    arrays = bank_arrays(teachers) if as_bank else tb.teachers
    before = checksum(arrays)
    target = make_target([6, 6, 2], rng)
    t_before = checksum(target.layers)
    m2ord_epoch(target, teachers, data, Optimizer("sgd", 1e-2), rng, batch_size=batch)
    assert checksum(arrays) == before
    assert checksum(target.layers) != t_before


def test_reported_losses_match_recomputation():
    rng = make_rng(3)
    data = synthetic_set(rng, n_classes=3, per_class=5, dim=6)
    tb = make_teacher_bank(3, 2, 6, rng)
    target = make_target([6, 6, 2], rng)
    bank = init_predictor_bank(3, [6, 2], rng)
    for _ in range(3):
        rep = o2md_epoch(bank, target, data, Optimizer("sgd", 1e-2), rng)
        sq = [np.sum((forward(bank.predictors[y], data.x[:, [i]]) - forward(target, data.x[:, [i]])) ** 2)
              for i, y in enumerate(data.y)]
        assert abs(rep - np.mean(sq)) <= 1e-10 * abs(np.mean(sq))
        rep = m2ord_epoch(target, tb, data, Optimizer("sgd", 1e-2), rng)
        sq = [np.sum((forward(target, data.x[:, [i]]) - tb.teachers[y] @ data.x[:, [i]]) ** 2)
              for i, y in enumerate(data.y)]
        assert abs(rep - np.mean(sq)) <= 1e-10 * abs(np.mean(sq))


def test_m2ord_monotone_on_separable_pair():
    # two orthogonal one-row teachers and two points, one per class
    data = LabeledSet(np.array([[1.0, 0.2], [0.1, 1.0]]), np.array([0, 1]), 2)
    teachers = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    target = make_target([2, 1], make_rng(4))
    opt = Optimizer("sgd", 1e-2)
    losses = [m2ord_loss(target, teachers, data)]
    for _ in range(50):
        losses.append(m2ord_epoch(target, teachers, data, opt, batch_size=2))
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_full_batch_o2md_monotone():
    rng = make_rng(5)
    data = synthetic_set(rng, n_classes=3, per_class=6, dim=8)
    target = make_target([8, 8, 5], rng)
    bank = init_predictor_bank(3, [8, 5], rng)
    opt = Optimizer("sgd", 1e-4)
    losses = [o2md_loss(bank, target, data)]
    for _ in range(10):
        losses.append(o2md_epoch(bank, target, data, opt, batch_size=len(data)))
    drops = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert drops >= 0.95 * 10


def test_full_batch_order_invariance():
    rng = make_rng(6)
    data = synthetic_set(rng, n_classes=2, per_class=5, dim=5)
    tb = make_teacher_bank(2, 2, 5, rng)
    start = make_target([5, 5, 2], rng)
    results = []
    for order_seed in (1, 2):
        target = start.copy()
        m2ord_epoch(target, tb, data, Optimizer("sgd", 1e-2), make_rng(order_seed), batch_size=len(data))
        results.append(target.layers)
    for a, b in zip(*results):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_schedule_degeneracy():
    rng = make_rng(7)
    data = synthetic_set(rng, n_classes=2, per_class=4, dim=5)
    target = make_target([5, 5, 3], rng)
    bank = init_predictor_bank(2, [5, 3], rng)
    a = bidirectional_train(bank.copy(), target.copy(), data,
                            TrainConfig(epochs=3, schedule=(("m2ord", 0), ("o2md", 1)), seed=9))
    b = bidirectional_train(bank.copy(), target.copy(), data,
                            TrainConfig(epochs=3, schedule=(("o2md", 1),), seed=9))
    for p, q in zip(a.bank.predictors, b.bank.predictors):
        np.testing.assert_array_equal(p.layers[0], q.layers[0])
    np.testing.assert_array_equal(a.target.layers[0], target.layers[0])
    assert not any(r.phase == "m2ord" for r in a.history)


def test_bidirectional_history_and_determinism():
    rng = make_rng(8)
    data = synthetic_set(rng, n_classes=3, per_class=4, dim=12)
    test = synthetic_set(make_rng(80), n_classes=3, per_class=2, dim=12)
    cfg = TrainConfig(epochs=2, seed=5)
    runs = [fit_bidirectional(data, 4, cfg, make_rng(11), test_data=test) for _ in range(2)]
    for p, q in zip(runs[0].bank.predictors, runs[1].bank.predictors):
        assert checksum(p.layers) == checksum(q.layers)
    assert checksum(runs[0].target.layers) == checksum(runs[1].target.layers)
    hist = runs[0].history
    assert [(r.epoch, r.phase, r.class_or_target) for r in hist[:6]] == [
        (0, "test", "all"), (1, "m2ord", "target"), (1, "o2md", "0"), (1, "o2md", "1"), (1, "o2md", "2"),
        (1, "test", "all")]
    assert len(hist) == 1 + 2 * 5
    assert runs[0].history == runs[1].history


def test_bidirectional_improves_on_separable_data():
    rng = make_rng(9)
    data = synthetic_set(rng, n_classes=3, per_class=6, dim=20, noise=0.05)
    model = fit_bidirectional(data, 6, TrainConfig(epochs=10, learning_rate=1e-2, seed=1), rng)
    assert np.mean(model.predict(data.x) == data.y) == 1.0
    model = fit_o2md(data, 6, TrainConfig(epochs=10, learning_rate=1e-2, seed=1), rng)
    assert np.mean(model.predict(data.x) == data.y) == 1.0


def test_predict_ties_go_to_lowest_class():
    target = LinearNet([np.eye(2)])
    bank = PredictorBank([LinearNet([np.eye(2)]), LinearNet([np.eye(2)])])
    from ldl.distill import TrainedModel
    assert TrainedModel(bank, target).predict(np.ones((2, 3))).tolist() == [0, 0, 0]


def test_config_validation():
    for bad in [dict(epochs=0), dict(learning_rate=0), dict(optimizer="lbfgs"), dict(batch_size=0),
                dict(schedule=()), dict(schedule=(("sideways", 1),)), dict(m2ord_learning_rate=-1.0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    cfg = TrainConfig(learning_rate=1e-3, m2ord_learning_rate=None)
    assert cfg.optimizer_for("m2ord").learning_rate == 1e-3
    assert TrainConfig().optimizer_for("m2ord").learning_rate == 1e-4


def test_shape_errors():
    rng = make_rng(10)
    data = synthetic_set(rng, n_classes=2, dim=4)
    bank = init_predictor_bank(2, [5, 3], rng)
    with pytest.raises(ShapeError):
        o2md_epoch(bank, make_target([5, 3], rng), data, Optimizer())
    with pytest.raises(ShapeError):
        o2md_epoch(init_predictor_bank(2, [4, 3], rng), make_target([4, 2], rng), data, Optimizer())
    with pytest.raises(ValueError, match="labels"):
        o2md_epoch(init_predictor_bank(1, [4, 3], rng), make_target([4, 3], rng), data, Optimizer())
