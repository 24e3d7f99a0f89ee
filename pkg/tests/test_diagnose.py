import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emuval.core import LabeledDataset, RngStream, pool_and_label
from emuval.diagnose import (
    benjamini_hochberg,
    diagnosis_csv,
    feature_space_test,
    partial_dependence,
    train_test_split,
)
from emuval.regress import RegressionMethod, fit_constant


def _bh_oracle(p, alpha):
    """Direct transcription of the step-up rule with explicit loops."""
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    r_max = 0
    for rank, i in enumerate(order, start=1):
        if p[i] <= rank * alpha / m:
            r_max = rank
    if r_max == 0:
        return [False] * m
    cut = p[order[r_max - 1]]
    return [v <= cut for v in p]


def test_bh_hand_example():
    assert benjamini_hochberg([0.01, 0.02, 0.5], 0.05).tolist() == [True, True, False]


def test_bh_all_ones():
    assert not benjamini_hochberg(np.ones(10), 0.05).any()


def test_bh_single():
    assert benjamini_hochberg([0.025], 0.05).tolist() == [True]


def test_bh_validation():
    with pytest.raises(ValueError):
        benjamini_hochberg([0.1], 0.0)
    with pytest.raises(ValueError):
        benjamini_hochberg([1.2], 0.05)


pvals = st.lists(st.floats(0, 1), min_size=1, max_size=40)


@given(pvals, st.floats(0.001, 0.5))
def test_bh_matches_oracle(p, alpha):
    assert benjamini_hochberg(p, alpha).tolist() == _bh_oracle(p, alpha)


@given(pvals, st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_bh_monotone_in_alpha(p, a, b):
    lo, hi = sorted((a, b))
    small, large = benjamini_hochberg(p, lo), benjamini_hochberg(p, hi)
    assert np.all(~small | large)


def _separated(seed, n=200):
    g = RngStream(seed).generator()
    x0 = g.normal(size=(n // 2, 2)) * 0.3 + np.array([-3.0, 0.0])
    x1 = g.normal(size=(n // 2, 2)) * 0.3 + np.array([3.0, 0.0])
    return pool_and_label(x0, x1)


def test_separated_clusters_flagged_with_opposite_signs():
    train = _separated(1)
    centres = np.array([[-3.0, 0.0], [3.0, 0.0]])
    diags = feature_space_test(train, centres, RegressionMethod.knn(3), 99, 0.05, RngStream(2), threads=1)
    assert all(d.flagged for d in diags)
    assert diags[0].direction == -1 and diags[1].direction == 1
    assert diags[0].p_value == 0.01


def test_null_labels_rarely_flagged():
    g = RngStream(4).generator()
    fractions = []
    for t in range(30):
        gt = RngStream(5, t).generator()
        train = LabeledDataset(gt.normal(size=(100, 2)), gt.integers(0, 2, 100))
        diags = feature_space_test(train, g.normal(size=(30, 2)), RegressionMethod.knn(5), 49, 0.05,
                                   RngStream(6, t), threads=1)
        fractions.append(np.mean([d.flagged for d in diags]))
    assert np.mean(fractions) <= 0.05 + 2 * np.std(fractions) / np.sqrt(len(fractions))


class ScriptedMethod:
    """Fits sit on the label rate for the observed labels and 1.0 for any other labelling."""

    kind = "scripted"

    def __init__(self, observed):
        self.observed = np.asarray(observed, dtype=float)

    def predictor(self, train, query):
        outer = self

        class P:
            def predict(self, labels, rng):
                same = np.array_equal(labels, outer.observed)
                return np.full(query.shape[0], outer.observed.mean() if same else 1.0)

        return P()


def test_pvalue_is_one_when_every_permutation_exceeds():
    x = np.linspace(-1, 1, 40)[:, None]
    labels = np.r_[np.zeros(20), np.ones(20)]
    diags = feature_space_test(LabeledDataset(x, labels), [[0.0]], ScriptedMethod(labels), 9, 0.05, RngStream(1))
    assert diags[0].deviation == 0.0
    assert diags[0].p_value == 1.0
    assert not diags[0].flagged


def test_ties_with_observed_do_not_count():
    # k = n makes every fit equal to the label rate, so all deviations tie at 0
    x = np.linspace(-1, 1, 10)[:, None]
    diags = feature_space_test(LabeledDataset(x, [0, 1] * 5), [[0.0]], RegressionMethod.knn(10), 9, 0.05,
                               RngStream(1))
    assert diags[0].p_value == 0.1
    assert not diags[0].flagged


def test_flags_respect_bh_and_nonzero_deviation():
    train = _separated(7, n=120)
    pts = RngStream(8).generator().normal(size=(40, 2)) * 3
    diags = feature_space_test(train, pts, RegressionMethod.knn(3), 49, 0.1, RngStream(9))
    flags = benjamini_hochberg([d.p_value for d in diags], 0.1)
    for d, f in zip(diags, flags):
        assert d.flagged == (f and d.deviation > 0)
        assert 1 / 50 <= d.p_value <= 1


def test_feature_space_deterministic_and_thread_invariant():
    train = _separated(3, n=80)
    pts = np.array([[0.0, 0.0], [2.0, 1.0]])
    method = RegressionMethod.random_forest(n_trees=10)
    a = feature_space_test(train, pts, method, 19, 0.05, RngStream(1), threads=1)
    b = feature_space_test(train, pts, method, 19, 0.05, RngStream(1), threads=3)
    assert [d.p_value for d in a] == [d.p_value for d in b]
    assert diagnosis_csv(a) == diagnosis_csv(b)


def test_single_label_train_rejected():
    with pytest.raises(ValueError):
        feature_space_test(LabeledDataset(np.zeros((4, 1)) + np.arange(4)[:, None], [1] * 4), [[0.0]],
                           RegressionMethod.knn(1), 9, 0.05, RngStream(0))


def test_train_test_split_sizes():
    data = _separated(1, n=100)
    train, test = train_test_split(data, 0.65, RngStream(1))
    assert train.n == 65 and test.shape == (35, 2)


class OnlyFirstFeature:
    def predict(self, x):
        return 1.0 / (1.0 + np.exp(-np.asarray(x)[:, 0]))


def test_partial_dependence():
    data = RngStream(2).generator().normal(size=(50, 3))
    grid = [-1.0, 0.0, 2.0]
    const = fit_constant(LabeledDataset(data, [0, 1] * 25))
    assert [v for _, v in partial_dependence(const, data, 0, grid)] == [0.5] * 3
    flat = [v for _, v in partial_dependence(OnlyFirstFeature(), data, 1, grid)]
    assert len(flat) == 3 and max(flat) - min(flat) < 1e-12
    rising = [v for _, v in partial_dependence(OnlyFirstFeature(), data, 0, grid)]
    assert rising[0] < rising[1] < rising[2]
    with pytest.raises(IndexError):
        partial_dependence(const, data, 3, grid)
    with pytest.raises(ValueError):
        partial_dependence(const, data, 0, [])


def test_diagnosis_csv_columns():
    diags = feature_space_test(_separated(1, n=40), [[0.0, 0.0]], RegressionMethod.knn(3), 9, 0.05, RngStream(1))
    header = diagnosis_csv(diags).splitlines()[0]
    assert header == "x1,x2,deviation,direction,p_value,flagged"
