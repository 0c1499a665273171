"""Encodings, trainers, and personalized model plumbing."""

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from fairuse.dataset import Dataset
from fairuse.groups import WITHHELD, GroupSpace
from fairuse.models import (ConvergenceError, ExhaustiveSizeError,
                            LinearModel, PersonalizedModel, Strategy,
                            TrainConfig, as_strategy, build_feature_map,
                            encode, encode_batch, indicator_block, predict,
                            train_generic, train_personalized,
                            train_zero_one_exhaustive)

from oracles import threshold_errors_1d

TWO_BY_TWO = GroupSpace((("sex", ("f", "m")), ("age", ("o", "y"))))
AB = GroupSpace((("g", ("a", "b")),))


def make_dataset(feats, labels, group_names, space=None):
    space = space or AB
    groups = tuple(space.group(*(name if isinstance(name, tuple)
                                 else (name,))) for name in group_names)
    return Dataset(np.asarray(feats, dtype=float), np.asarray(labels),
                   groups, space)


def test_as_strategy_coercion():
    assert as_strategy("ONEHOT") is Strategy.ONEHOT
    assert as_strategy(Strategy.DECOUPLED) is Strategy.DECOUPLED
    with pytest.raises(ValueError):
        as_strategy("one-hot")


def test_train_config_validation():
    assert TrainConfig(loss="zero-one-exhaustive").loss == "zero_one"
    assert TrainConfig(loss="zero-one").loss == "zero_one"
    with pytest.raises(ValueError):
        TrainConfig(loss="square")
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge", l2_penalty=0.1)
    with pytest.raises(ValueError):
        TrainConfig(loss="zero_one", l2_penalty=0.1)
    with pytest.raises(ValueError):
        TrainConfig(l2_penalty=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(gradient_tolerance=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_iterations=0)


def test_feature_map_names_per_strategy():
    base = ("x1", "x2")
    onehot = build_feature_map(Strategy.ONEHOT, TWO_BY_TWO, base)
    assert onehot.encoded_features == ("x1", "x2", "sex=m", "age=y")
    assert onehot.n_indicators == 2
    inter = build_feature_map(Strategy.INTERSECTIONAL, TWO_BY_TWO, base)
    assert inter.encoded_features == ("x1", "x2", "cell=f,y", "cell=m,o",
                                      "cell=m,y")
    for strategy in (Strategy.GENERIC, Strategy.DECOUPLED):
        fmap = build_feature_map(strategy, TWO_BY_TWO, base)
        assert fmap.encoded_features == base


def test_indicator_blocks_reference_levels():
    cells = TWO_BY_TWO.cells()
    onehot = [list(indicator_block(TWO_BY_TWO, Strategy.ONEHOT, g))
              for g in cells]
    assert onehot == [[0, 0], [0, 1], [1, 0], [1, 1]]
    inter = [list(indicator_block(TWO_BY_TWO, Strategy.INTERSECTIONAL, g))
             for g in cells]
    assert inter == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert indicator_block(TWO_BY_TWO, Strategy.GENERIC,
                           cells[0]).size == 0


def test_encode_appends_indicators():
    g = TWO_BY_TWO.group("m", "y")
    row = encode([1.5, -2.0], g, Strategy.ONEHOT, TWO_BY_TWO)
    assert list(row) == [1.5, -2.0, 1.0, 1.0]
    batch = encode_batch(np.array([[1.0, 2.0], [3.0, 4.0]]), g,
                         Strategy.INTERSECTIONAL, TWO_BY_TWO)
    assert batch.shape == (2, 5)
    assert list(batch[0]) == [1.0, 2.0, 0.0, 0.0, 1.0]


def test_linear_model_validation():
    fmap = build_feature_map(Strategy.GENERIC, AB, ("x1",))
    lm = LinearModel(np.array([2.0, -1.0]), fmap)
    assert list(lm.margins_encoded(np.array([[0.0], [1.0]]))) == [-1.0, 1.0]
    with pytest.raises(ValueError):
        LinearModel(np.array([1.0, 2.0, 3.0]), fmap)
    with pytest.raises(ValueError):
        LinearModel(np.array([np.nan, 0.0]), fmap)


def test_personalized_model_requires_matching_parts():
    fmap = build_feature_map(Strategy.GENERIC, AB, ("x1",))
    lm = LinearModel(np.zeros(2), fmap)
    with pytest.raises(ValueError):
        PersonalizedModel(Strategy.DECOUPLED, AB, lm, TrainConfig())
    with pytest.raises(ValueError):
        PersonalizedModel(Strategy.ONEHOT, AB, lm, TrainConfig())
    partial = {AB.group("a"): lm}
    with pytest.raises(ValueError):
        PersonalizedModel(Strategy.DECOUPLED, AB, lm, TrainConfig(),
                          cells=partial)


def logistic_objective(w, x1, y, lam, n_base):
    m = y * (x1 @ w)
    mask = np.zeros(x1.shape[1])
    mask[:n_base] = 1.0
    return float(np.mean(np.logaddexp(0.0, -m))
                 + lam * np.sum(mask * w * w))


def test_logistic_gradient_contract_and_scipy_crosscheck():
    rng = np.random.default_rng(0)
    n = 120
    x = rng.normal(size=(n, 2))
    logits = 1.2 * x[:, 0] - 0.7 * x[:, 1] + 0.3
    y = np.where(rng.random(n) < expit(logits), 1, -1)
    groups = tuple(AB.cells()[i % 2] for i in range(n))
    ds = Dataset(x, y, groups, AB)
    cfg = TrainConfig(l2_penalty=0.05)
    model = train_generic(ds, cfg)
    w = model.generic.weights
    x1 = np.hstack([x, np.ones((n, 1))])
    eps = 1e-6
    grad = np.array([
        (logistic_objective(w + eps * np.eye(3)[j], x1, y, 0.05, 2)
         - logistic_objective(w - eps * np.eye(3)[j], x1, y, 0.05, 2))
        / (2 * eps)
        for j in range(3)])
    assert np.max(np.abs(grad)) <= cfg.gradient_tolerance + 1e-7
    res = minimize(logistic_objective, np.zeros(3),
                   args=(x1, y, 0.05, 2), method="BFGS",
                   options={"gtol": 1e-10})
    ours = logistic_objective(w, x1, y, 0.05, 2)
    assert ours <= res.fun + 1e-8


def test_uninformative_attribute_gets_zero_indicator_weight():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(40, 2))
    y_base = np.where(rng.random(40) < expit(base[:, 0]), 1, -1)
    feats = np.vstack([base, base])
    labels = np.concatenate([y_base, y_base])
    groups = tuple(AB.group("a") for _ in range(40)) + \
        tuple(AB.group("b") for _ in range(40))
    ds = Dataset(feats, labels, groups, AB)
    model = train_personalized(ds, Strategy.ONEHOT,
                               TrainConfig(l2_penalty=1e-3))
    indicator_weight = model.model.weights[2]
    assert abs(indicator_weight) <= 1e-5


def test_hinge_training_is_exact_on_separable_data():
    x = np.array([[-2.0, 0.0], [-1.0, 1.0], [1.0, 0.0], [2.0, -1.0]])
    y = np.array([-1, -1, 1, 1])
    ds = make_dataset(x, y, ["a", "b", "a", "b"])
    model = train_generic(ds, TrainConfig(loss="hinge"))
    margins = model.generic.margins_encoded(x)
    hinge = np.maximum(0.0, 1.0 - y * margins)
    assert float(hinge.mean()) <= 1e-8
    assert np.all(np.where(margins >= 0, 1, -1) == y)


@given(st.lists(st.tuples(st.integers(-10, 10),
                          st.sampled_from([-1, 1])),
                min_size=2, max_size=12))
def test_exhaustive_1d_matches_threshold_scan(points):
    xs = np.array([[p[0] / 2.0] for p in points])
    ys = np.array([p[1] for p in points])
    assume(len(set(ys)) == 2)
    groups = tuple(AB.cells()[i % 2] for i in range(len(points)))
    ds = Dataset(xs, ys, groups, AB)
    model = train_zero_one_exhaustive(ds, Strategy.GENERIC)
    margins = model.model.margins_encoded(xs)
    errors = int(np.sum(np.where(margins >= 0, 1, -1) != ys))
    assert errors == threshold_errors_1d(xs[:, 0], ys)


def test_exhaustive_2d_beats_dense_rule_grid():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 2)).round(1)
    y = np.where(x[:, 0] + 0.5 * x[:, 1] + 0.2 * rng.normal(size=12) > 0,
                 1, -1)
    if len(set(y)) < 2:
        y[0] = -y[0]
    groups = tuple(AB.cells()[i % 2] for i in range(12))
    ds = Dataset(x, y, groups, AB)
    model = train_zero_one_exhaustive(ds, Strategy.GENERIC)
    margins = model.model.margins_encoded(x)
    errors = int(np.sum(np.where(margins >= 0, 1, -1) != y))
    best_grid = y.size
    for angle in np.linspace(0.0, np.pi, 180, endpoint=False):
        w = np.array([np.cos(angle), np.sin(angle)])
        z = x @ w
        cuts = np.concatenate([[z.min() - 1.0],
                               (np.sort(z)[1:] + np.sort(z)[:-1]) / 2.0,
                               [z.max() + 1.0]])
        for t in cuts:
            for sign in (1, -1):
                pred = np.where(sign * (z - t) >= 0, 1, -1)
                best_grid = min(best_grid, int(np.sum(pred != y)))
    assert errors <= best_grid


def test_exhaustive_separable_2d_is_perfect():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
                  [3.0, 3.0], [4.0, 3.0]])
    y = np.array([-1, -1, -1, -1, 1, 1])
    groups = tuple(AB.cells()[i % 2] for i in range(6))
    ds = Dataset(x, y, groups, AB)
    model = train_zero_one_exhaustive(ds, Strategy.GENERIC)
    margins = model.model.margins_encoded(x)
    assert np.all(np.where(margins >= 0, 1, -1) == y)


def test_exhaustive_size_limits():
    rng = np.random.default_rng(0)
    wide = Dataset(rng.normal(size=(10, 3)),
                   np.array([1, -1] * 5),
                   tuple(TWO_BY_TWO.cells()[i % 4] for i in range(10)),
                   TWO_BY_TWO)
    with pytest.raises(ExhaustiveSizeError):
        train_zero_one_exhaustive(wide, Strategy.ONEHOT)
    n = 501
    tall = Dataset(rng.normal(size=(n, 1)),
                   np.where(rng.random(n) < 0.5, 1, -1),
                   tuple(AB.cells()[i % 2] for i in range(n)), AB)
    with pytest.raises(ExhaustiveSizeError):
        train_zero_one_exhaustive(tall, Strategy.GENERIC)


def test_decoupled_empty_cell_inherits_generic():
    space = GroupSpace((("g", ("a", "b", "c")),))
    feats = np.array([[-1.0], [1.0], [-2.0], [2.0]])
    labels = np.array([-1, 1, -1, 1])
    groups = (space.group("a"), space.group("a"),
              space.group("b"), space.group("b"))
    ds = Dataset(feats, labels, groups, space)
    model = train_personalized(ds, Strategy.DECOUPLED,
                               TrainConfig(l2_penalty=1e-3))
    c = space.group("c")
    assert model.empty_cells == (c,)
    assert model.cells[c] is model.generic
    assert any("no training rows" in f for f in model.all_flags())


def test_decoupled_single_class_cell_constant():
    feats = np.array([[-1.0], [1.0], [0.5], [2.0]])
    labels = np.array([-1, 1, 1, 1])
    groups = (AB.group("a"), AB.group("a"),
              AB.group("b"), AB.group("b"))
    ds = Dataset(feats, labels, groups, AB)
    with pytest.warns(UserWarning, match="single-class"):
        model = train_personalized(ds, Strategy.DECOUPLED,
                                   TrainConfig(l2_penalty=1e-3))
    b = AB.group("b")
    assert model.degenerate_cells == (b,)
    cell = model.cells[b]
    assert cell.weights[-1] == 30.0
    assert np.all(cell.weights[:-1] == 0.0)
    score, label = predict(model, [0.0], b)
    assert label == 1 and score > 0.99


def test_margins_routing_and_truthful_agreement():
    rng = np.random.default_rng(2)
    n = 40
    x = rng.normal(size=(n, 2))
    y = np.where(rng.random(n) < expit(x[:, 0]), 1, -1)
    groups = tuple(TWO_BY_TWO.cells()[i % 4] for i in range(n))
    ds = Dataset(x, y, groups, TWO_BY_TWO)
    for strategy in (Strategy.ONEHOT, Strategy.INTERSECTIONAL,
                     Strategy.DECOUPLED, Strategy.GENERIC):
        model = train_personalized(ds, strategy,
                                   TrainConfig(l2_penalty=1e-3))
        assert np.array_equal(model.margins(x, WITHHELD),
                              model.generic.margins_encoded(x))
        truthful = model.margins_truthful(x, ds.cell_indices)
        by_report = np.empty(n)
        for g in TWO_BY_TWO.cells():
            rows = ds.rows_for(g)
            by_report[rows] = model.margins(x[rows], g)
        assert np.allclose(truthful, by_report, rtol=0.0, atol=1e-12)
        single = model.margins(x[0], groups[0])
        assert np.isscalar(single) or single.ndim == 0


def test_generic_strategy_ignores_reported_group():
    ds = make_dataset([[-1.0], [1.0], [2.0], [-2.0]], [-1, 1, 1, -1],
                      ["a", "a", "b", "b"])
    model = train_personalized(ds, Strategy.GENERIC,
                               TrainConfig(l2_penalty=1e-3))
    a = AB.group("a")
    b = AB.group("b")
    assert np.array_equal(model.margins(ds.features, a),
                          model.margins(ds.features, b))


def test_predict_boundary_margin_is_positive():
    fmap = build_feature_map(Strategy.GENERIC, AB, ("x1",))
    lm = LinearModel(np.zeros(2), fmap)
    model = PersonalizedModel(Strategy.GENERIC, AB, lm, TrainConfig(),
                              model=lm)
    score, label = predict(model, [0.0], AB.group("a"))
    assert score == 0.5 and label == 1


def test_convergence_error_carries_gradient_norm():
    rng = np.random.default_rng(3)
    n = 60
    x = rng.normal(size=(n, 2))
    y = np.where(rng.random(n) < expit(2 * x[:, 0]), 1, -1)
    groups = tuple(AB.cells()[i % 2] for i in range(n))
    ds = Dataset(x, y, groups, AB)
    with pytest.raises(ConvergenceError) as err:
        train_generic(ds, TrainConfig(max_iterations=1,
                                      gradient_tolerance=1e-12))
    assert err.value.grad_norm > 1e-12
