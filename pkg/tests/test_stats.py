import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emuval.core import LabeledDataset, RngStream, pool_and_label
from emuval.regress import RegressionMethod
from emuval.stats import (
    C2STStatistic,
    EnergyStatistic,
    MMDStatistic,
    RegressionStatistic,
    c2st_statistic,
    cvm_uniformity,
    energy_statistic,
    ks_uniformity,
    make_statistic,
    median_bandwidth,
    mmd_statistic,
    regression_statistic,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def _random_data(seed, n0=15, n1=12, dim=3, shift=0.0):
    g = RngStream(seed).generator()
    return pool_and_label(g.normal(size=(n0, dim)), g.normal(size=(n1, dim)) + shift)


# ---------------------------------------------------------------- brute-force oracles


def _mmd_loops(x, y):
    pooled = np.vstack([x, y])
    d = [np.linalg.norm(a - b) for i, a in enumerate(pooled) for b in pooled[i + 1:]]
    d = [v for v in d if v > 0]
    h = float(np.median(d)) if d else 1.0

    def k(a, b):
        return math.exp(-np.sum((a - b) ** 2) / (2 * h * h))

    kxx = sum(k(a, b) for a in x for b in x) / len(x) ** 2
    kyy = sum(k(a, b) for a in y for b in y) / len(y) ** 2
    kxy = sum(k(a, b) for a in x for b in y) / (len(x) * len(y))
    return kxx + kyy - 2 * kxy


def _energy_loops(x, y):
    cross = sum(np.linalg.norm(a - b) for a in x for b in y) / (len(x) * len(y))
    within_x = sum(np.linalg.norm(a - b) for a in x for b in x) / len(x) ** 2
    within_y = sum(np.linalg.norm(a - b) for a in y for b in y) / len(y) ** 2
    return 2 * cross - within_x - within_y


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_mmd_matches_definition(seed):
    d = _random_data(seed, shift=0.7)
    x, y = d.points[d.labels == 0], d.points[d.labels == 1]
    assert mmd_statistic(d) == pytest.approx(_mmd_loops(x, y), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_energy_matches_definition(seed):
    d = _random_data(seed, shift=0.7)
    x, y = d.points[d.labels == 0], d.points[d.labels == 1]
    assert energy_statistic(d) == pytest.approx(_energy_loops(x, y), rel=1e-9)


# ---------------------------------------------------------------- hand-computed cases


def test_regression_statistic_hand_value():
    d = LabeledDataset(np.array([[0.0], [1.0]]), [0, 1])
    assert regression_statistic(d, RegressionMethod.knn(1), "full", RngStream(0)) == 0.25


def test_regression_statistic_constant_is_zero():
    d = _random_data(4, shift=3.0)
    assert regression_statistic(d, RegressionMethod.constant(), "full", RngStream(0)) == 0.0


def test_regression_split_mode_runs_and_needs_four_points():
    d = _random_data(5, shift=3.0)
    v = regression_statistic(d, RegressionMethod.knn(3), "split", RngStream(1))
    assert v > 0.05
    with pytest.raises(ValueError):
        regression_statistic(LabeledDataset([[0.0], [1.0], [2.0]], [0, 1, 1]), RegressionMethod.knn(1), "split",
                             RngStream(0))


def test_single_label_rejected():
    d = LabeledDataset(np.arange(4.0)[:, None], [1, 1, 1, 1])
    for fn in (lambda: mmd_statistic(d), lambda: energy_statistic(d),
               lambda: regression_statistic(d, RegressionMethod.knn(1), "full", RngStream(0)),
               lambda: c2st_statistic(d, RegressionMethod.knn(1), RngStream(0))):
        with pytest.raises(ValueError):
            fn()


def test_mmd_identical_single_points():
    d = pool_and_label([[1.0, 2.0]], [[1.0, 2.0]])
    assert mmd_statistic(d) == 0.0
    assert median_bandwidth(d.points) == 1.0


def test_mmd_identical_pairs():
    a, b = [0.0, 1.0], [3.0, -1.0]
    assert mmd_statistic(pool_and_label([a, b], [a, b])) == pytest.approx(0.0, abs=1e-15)


def test_energy_identical_pairs():
    a, b = [0.0, 1.0], [3.0, -1.0]
    assert energy_statistic(pool_and_label([a, b], [a, b])) == pytest.approx(0.0, abs=1e-15)


def test_energy_singletons():
    a, b = np.array([0.0, 1.0]), np.array([3.0, -1.0])
    assert energy_statistic(pool_and_label([a], [b])) == pytest.approx(2 * np.linalg.norm(a - b))


def test_mmd_detects_large_shift():
    wins = 0
    for t in range(100):
        g = RngStream(100, t).generator()
        x = g.normal(size=(50, 1))
        far = mmd_statistic(pool_and_label(x, g.normal(10.0, 1.0, size=(50, 1))))
        near = mmd_statistic(pool_and_label(x, g.normal(size=(50, 1))))
        wins += far > near
    assert wins >= 95


@pytest.mark.parametrize("seed", range(100))
def test_energy_nonnegative(seed):
    g = RngStream(seed).generator()
    n0, n1 = g.integers(1, 8, size=2)
    d = pool_and_label(g.normal(size=(n0, 2)), g.normal(size=(n1, 2)))
    assert energy_statistic(d) >= 0.0


def test_c2st_chance_level():
    g = RngStream(6).generator()
    n = 2000
    d = LabeledDataset(g.normal(size=(n, 2)), g.integers(0, 2, n))
    acc = c2st_statistic(d, RegressionMethod.knn(15), RngStream(1))
    assert abs(acc - 0.5) < 0.05


def test_c2st_separable_is_perfect():
    x = np.r_[np.linspace(-5, -1, 20), np.linspace(1, 5, 20)][:, None]
    d = LabeledDataset(x, np.r_[np.zeros(20), np.ones(20)])
    assert c2st_statistic(d, RegressionMethod.knn(1), RngStream(2)) == 1.0


# ---------------------------------------------------------------- invariances


@pytest.mark.parametrize("stat", [MMDStatistic(), EnergyStatistic(), RegressionStatistic(RegressionMethod.knn(3))])
def test_joint_permutation_invariance(stat):
    d = _random_data(8, shift=0.5)
    perm = RngStream(1).generator().permutation(d.n)
    shuffled = LabeledDataset(d.points[perm], d.labels[perm])
    assert stat(d, RngStream(0)) == pytest.approx(stat(shuffled, RngStream(0)), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("stat", [MMDStatistic(), EnergyStatistic()])
def test_label_swap_symmetry(stat):
    d = _random_data(9, shift=0.5)
    swapped = LabeledDataset(d.points, 1 - d.labels)
    assert stat(d) == pytest.approx(stat(swapped), rel=1e-12)


@pytest.mark.parametrize("stat", [MMDStatistic(), EnergyStatistic(), RegressionStatistic(RegressionMethod.knn(4)),
                                  RegressionStatistic(RegressionMethod.random_forest(n_trees=5)),
                                  C2STStatistic(RegressionMethod.knn(3))])
def test_prepared_batch_matches_single(stat):
    d = _random_data(10, shift=0.3)
    ev = stat.prepare(d.points)
    g = RngStream(2).generator()
    labels = np.stack([d.labels[g.permutation(d.n)] for _ in range(6)])
    rngs = [RngStream(3, j) for j in range(6)]
    many = ev.evaluate_many(labels, rngs)
    single = [ev.evaluate(labels[j], rngs[j]) for j in range(6)]
    assert np.allclose(many, single, rtol=1e-12, atol=1e-15)


def test_make_statistic_tags():
    assert make_statistic("mmd").tag == "mmd"
    assert make_statistic("c2st", RegressionMethod.knn(2)).tag == "c2st"
    with pytest.raises(ValueError):
        make_statistic("bogus")


# ---------------------------------------------------------------- uniformity statistics


def test_ks_single_half():
    assert ks_uniformity([0.5]) == 0.5


def test_ks_even_grid():
    for b in (1, 5, 99):
        v = np.arange(1, b + 1) / (b + 1)
        assert ks_uniformity(v) == pytest.approx(1 / (b + 1), abs=1e-15)


def test_ks_all_zeros():
    assert ks_uniformity(np.zeros(10)) == 1.0


def test_cvm_single_half():
    assert abs(cvm_uniformity([0.5]) - 1 / 12) <= 1e-12


def test_cvm_single_zero():
    assert cvm_uniformity([0.0]) == pytest.approx(1 / 3, abs=1e-15)


def _cvm_quadrature(v, grid=200_001):
    z = np.linspace(0, 1, grid)
    ecdf = np.searchsorted(np.sort(v), z, side="right") / len(v)
    return np.trapezoid((ecdf - z) ** 2, z)


@given(st.lists(unit, min_size=1, max_size=8))
@settings(max_examples=30, deadline=None)
def test_cvm_matches_quadrature(values):
    assert cvm_uniformity(values) == pytest.approx(_cvm_quadrature(np.array(values)), abs=2e-5)


@given(st.lists(unit, min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_ks_matches_grid_supremum(values):
    v = np.sort(np.array(values))
    z = np.unique(np.r_[v, np.linspace(0, 1, 2001)])
    lower = np.searchsorted(v, z, side="left") / len(v)
    upper = np.searchsorted(v, z, side="right") / len(v)
    brute = max(np.max(np.abs(upper - z)), np.max(np.abs(lower - z)))
    assert ks_uniformity(values) == pytest.approx(brute, abs=1e-12)


@given(st.lists(unit, min_size=1, max_size=30), st.randoms())
def test_uniformity_order_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert ks_uniformity(values) == ks_uniformity(shuffled)
    assert cvm_uniformity(values) == pytest.approx(cvm_uniformity(shuffled), rel=1e-12, abs=1e-15)


@given(st.lists(unit, min_size=1, max_size=30))
def test_uniformity_ranges(values):
    assert 0.0 < ks_uniformity(values) <= 1.0
    assert cvm_uniformity(values) >= 1 / (12 * len(values) ** 2) - 1e-15


def test_cvm_shrinks_for_large_uniform_samples():
    hits = sum(cvm_uniformity(RngStream(5, t).generator().random(10_000)) < 0.001 for t in range(100))
    assert hits >= 95


@pytest.mark.parametrize("bad", [[], [1.5], [-0.1], [np.nan]])
def test_uniformity_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        ks_uniformity(bad)
    with pytest.raises(ValueError):
        cvm_uniformity(bad)
