import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emuval.core import DimensionMismatchError, LabeledDataset, RngStream
from emuval.regress import (
    ForestParams,
    RegressionMethod,
    estimate_cv_error,
    fit_constant,
    fit_knn,
    fit_random_forest,
    kfold_partition,
    knn_weights,
    predict,
)


def _data(x, y):
    return LabeledDataset(np.asarray(x, dtype=float).reshape(len(y), -1), y)


# ---------------------------------------------------------------- knn


def test_knn_nearest_is_itself():
    m = fit_knn(_data([0, 1], [0, 1]), 1)
    assert predict(m, [0.0]) == 0.0


def test_knn_average_of_two():
    m = fit_knn(_data([0, 1], [0, 1]), 2)
    assert predict(m, [0.5]) == 0.5


def test_knn_constant_labels():
    g = RngStream(1).generator()
    d = LabeledDataset(g.normal(size=(20, 3)), np.ones(20))
    m = fit_knn(d, 7)
    assert np.all(m.predict(g.normal(size=(50, 3))) == 1.0)


def test_knn_tie_breaks_by_lowest_index():
    # query 0.5 is equidistant from both points; k=1 must pick index 0
    d = _data([0.0, 1.0], [1, 0])
    assert predict(fit_knn(d, 1), [0.5]) == 1.0
    d = _data([1.0, 0.0], [1, 0])
    assert predict(fit_knn(d, 1), [0.5]) == 1.0


def test_knn_weights_rows_sum_to_one():
    d2 = np.array([[0.0, 1.0, 1.0, 1.0], [4.0, 0.0, 0.0, 4.0]])
    w = knn_weights(d2, 2)
    assert np.allclose(w.sum(axis=1), 1.0)
    assert w[0].tolist() == [0.5, 0.5, 0.0, 0.0]
    assert w[1].tolist() == [0.0, 0.5, 0.5, 0.0]


def test_knn_k_out_of_range():
    with pytest.raises(ValueError):
        fit_knn(_data([0, 1], [0, 1]), 3)
    with pytest.raises(ValueError):
        fit_knn(_data([0, 1], [0, 1]), 0)


@given(st.integers(2, 30), st.integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_knn_with_k_equal_n_is_constant(n, seed):
    g = RngStream(seed).generator()
    y = g.integers(0, 2, n).astype(float)
    y[0], y[1] = 0, 1
    d = LabeledDataset(g.normal(size=(n, 2)), y)
    q = g.normal(size=(10, 2))
    assert np.allclose(fit_knn(d, n).predict(q), fit_constant(d).predict(q), atol=1e-15)


# ---------------------------------------------------------------- constant


def test_constant_model_value():
    d = _data(np.arange(10), [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    assert np.all(fit_constant(d).predict(np.linspace(-5, 5, 7)) == pytest.approx(0.3))


def test_predict_dimension_mismatch():
    d = LabeledDataset(np.zeros((4, 2)) + np.arange(4)[:, None], [0, 1, 0, 1])
    for model in (fit_constant(d), fit_knn(d, 1), fit_random_forest(d, ForestParams(n_trees=3), RngStream(0))):
        with pytest.raises(DimensionMismatchError):
            model.predict(np.zeros((2, 3)))


# ---------------------------------------------------------------- forest


def _sse(y):
    return float(((y - y.mean()) ** 2).sum()) if y.size else 0.0


def _reference_tree(x, y, min_leaf, ties):
    """Exhaustive single-feature regression tree: best midpoint split by SSE reduction."""
    if y.size < 2 * min_leaf or y.min() == y.max():
        return float(y.mean())
    u = np.unique(x)
    best, gains = None, []
    for a, b in zip(u[:-1], u[1:]):
        left = x <= a
        if left.sum() < min_leaf or (~left).sum() < min_leaf:
            continue
        gain = _sse(y) - _sse(y[left]) - _sse(y[~left])
        gains.append(gain)
        if best is None or gain > best[0] + 1e-12:
            best = (gain, (a + b) / 2)
    if best is None or best[0] <= 1e-12:
        return float(y.mean())
    if sum(abs(g - best[0]) < 1e-12 for g in gains) > 1:
        ties.append(best)
    left = x <= best[1]
    return (best[1], _reference_tree(x[left], y[left], min_leaf, ties),
            _reference_tree(x[~left], y[~left], min_leaf, ties))


def _reference_predict(tree, v):
    while isinstance(tree, tuple):
        tree = tree[1] if v <= tree[0] else tree[2]
    return tree


@pytest.mark.parametrize("min_leaf", [1, 2])
def test_single_tree_matches_exhaustive_construction(min_leaf):
    x = np.array([0.3, 1.1, 2.0, 2.9, 4.2, 5.0])
    query = np.linspace(-1, 6, 71)
    checked = 0
    for labels in itertools.product([0.0, 1.0], repeat=6):
        y = np.array(labels)
        if y.min() == y.max():
            continue
        ties = []
        ref = _reference_tree(x, y, min_leaf, ties)
        if ties:
            continue  # equal-gain splits have no canonical winner
        params = ForestParams(n_trees=1, mtry=1, min_leaf=min_leaf, bootstrap=False)
        model = fit_random_forest(_data(x, y), params, RngStream(5))
        got = model.predict(query[:, None])
        want = np.array([_reference_predict(ref, v) for v in query])
        assert np.allclose(got, want), labels
        checked += 1
    assert checked > 10


def test_forest_separable():
    g = RngStream(11).generator()
    x = np.concatenate([g.uniform(-3, 0, 50) - 0.01, g.uniform(1, 4, 50) + 0.01])
    d = _data(x, np.r_[np.zeros(50), np.ones(50)])
    m = fit_random_forest(d, ForestParams(n_trees=100), RngStream(2))
    assert predict(m, [-5.0]) < 0.2
    assert predict(m, [6.0]) > 0.8


def test_forest_constant_labels():
    g = RngStream(3).generator()
    d = LabeledDataset(g.normal(size=(30, 4)), np.ones(30))
    m = fit_random_forest(d, ForestParams(n_trees=10), RngStream(1))
    assert np.all(m.predict(g.normal(size=(20, 4))) == 1.0)


def test_forest_duplicated_points_become_leaves():
    d = LabeledDataset(np.ones((10, 2)), [0, 1] * 5)
    m = fit_random_forest(d, ForestParams(n_trees=5, min_leaf=1), RngStream(1))
    assert np.all(m.tree_predictions(np.ones((1, 2))).ravel() <= 1.0)


def test_forest_deterministic():
    g = RngStream(8).generator()
    d = LabeledDataset(g.normal(size=(80, 5)), g.integers(0, 2, 80))
    q = g.normal(size=(30, 5))
    a = fit_random_forest(d, ForestParams(n_trees=20), RngStream(9)).predict(q)
    b = fit_random_forest(d, ForestParams(n_trees=20), RngStream(9)).predict(q)
    assert np.array_equal(a, b)


def test_forest_range_on_many_points():
    g = RngStream(4).generator()
    d = LabeledDataset(g.normal(size=(100, 3)), g.integers(0, 2, 100))
    p = fit_random_forest(d, ForestParams(n_trees=30), RngStream(1)).predict(g.normal(size=(10_000, 3)) * 3)
    assert p.min() >= 0.0 and p.max() <= 1.0


def test_forest_tree_order_invariance():
    g = RngStream(6).generator()
    d = LabeledDataset(g.normal(size=(60, 2)), g.integers(0, 2, 60))
    m = fit_random_forest(d, ForestParams(n_trees=15), RngStream(1))
    per_tree = m.tree_predictions(g.normal(size=(25, 2)))
    order = g.permutation(per_tree.shape[0])
    assert np.allclose(per_tree[order].mean(axis=0), per_tree.mean(axis=0))


def test_forest_params_validation():
    with pytest.raises(ValueError):
        ForestParams(n_trees=0)
    with pytest.raises(ValueError):
        ForestParams(min_leaf=0)
    with pytest.raises(ValueError):
        ForestParams(mtry=5).resolved_mtry(3)
    assert ForestParams().resolved_mtry(100) == 10
    assert ForestParams().resolved_mtry(10) == 4


def test_prepared_predictor_matches_direct_fit():
    g = RngStream(12).generator()
    pts = g.normal(size=(60, 3))
    y = g.integers(0, 2, 60).astype(float)
    for method in (RegressionMethod.knn(5), RegressionMethod.random_forest(n_trees=10), RegressionMethod.constant()):
        pred = method.predictor(pts)
        direct = method.fit_arrays(pts, y, RngStream(3)).predict(pts)
        assert np.array_equal(pred.predict(y, RngStream(3)), direct)


# ---------------------------------------------------------------- cross-validation


def test_cv_perfect_predictor():
    x = np.repeat(np.arange(10.0), 4)
    y = (x >= 5).astype(float)
    err = estimate_cv_error(RegressionMethod.knn(1), _data(x, y), 4, RngStream(1))
    assert err == pytest.approx(0.0, abs=1e-12)


def test_cv_constant_on_balanced_labels():
    g = RngStream(2).generator()
    n = 2000
    d = LabeledDataset(g.normal(size=(n, 1)), np.r_[np.zeros(n // 2), np.ones(n // 2)][g.permutation(n)])
    err = estimate_cv_error(RegressionMethod.constant(), d, 5, RngStream(3))
    assert err == pytest.approx(0.25, abs=0.005)


def test_cv_invariant_to_fold_numbering():
    g = RngStream(7).generator()
    d = LabeledDataset(g.normal(size=(40, 2)), g.integers(0, 2, 40))
    parts = kfold_partition(40, 4, RngStream(1))
    method = RegressionMethod.random_forest(n_trees=10)
    a = estimate_cv_error(method, d, 4, RngStream(5), partition=parts)
    b = estimate_cv_error(method, d, 4, RngStream(5), partition=parts[::-1])
    assert a == b


def test_cv_too_few_points():
    with pytest.raises(ValueError):
        estimate_cv_error(RegressionMethod.constant(), _data([0, 1, 2], [0, 1, 0]), 5, RngStream(1))
    with pytest.raises(ValueError):
        estimate_cv_error(RegressionMethod.constant(), _data([0, 1, 2], [0, 1, 0]), 1, RngStream(1))


@given(st.integers(2, 60), st.integers(2, 8), st.integers(0, 1000))
def test_kfold_partition_covers(n, folds, seed):
    folds = min(folds, n)
    parts = kfold_partition(n, folds, RngStream(seed))
    assert sorted(np.concatenate(parts).tolist()) == list(range(n))
