import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emuval.core import (
    DimensionMismatchError,
    LabeledDataset,
    MalformedCSVError,
    RngStream,
    Sample,
    TestResult,
    derive_substream,
    parallel_map,
    permutation_pvalue,
    pool_and_label,
    read_sample_csv,
    resolve_threads,
    write_sample_csv,
)

seeds = st.integers(min_value=0, max_value=2**64 - 1)


def test_substream_is_deterministic():
    parent = RngStream(7, 0)
    a = derive_substream(parent, 0).generator().random(5)
    b = derive_substream(parent, 0).generator().random(5)
    assert np.array_equal(a, b)


def test_substreams_differ_by_index():
    parent = RngStream(7, 0)
    a = parent.substream(0).generator().random(5)
    b = parent.substream(1).generator().random(5)
    assert not np.array_equal(a, b)


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        derive_substream(RngStream(1), -1)


@given(seeds, st.integers(0, 2**64 - 1), st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_substream_pure_function(seed, stream, index):
    parent = RngStream(seed, stream)
    assert derive_substream(parent, index) == derive_substream(RngStream(seed, stream), index)


@pytest.mark.parametrize("seed,stream", [(0, 0), (7, 0), (2**63, 12345), (99, 2**64 - 1)])
def test_uniform_mean_near_half(seed, stream):
    u = RngStream(seed, stream).generator().random(10_000)
    assert 0.45 <= u.mean() <= 0.55


def test_pool_and_label_order():
    d = pool_and_label([[0.0]], [[1.0]])
    assert d.points.tolist() == [[0.0], [1.0]]
    assert d.labels.tolist() == [0.0, 1.0]


def test_pool_equal_sizes_gives_half():
    g = RngStream(3).generator()
    d = pool_and_label(g.normal(size=(100, 2)), g.normal(size=(100, 2)))
    assert d.pi1 == 0.5


def test_pool_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        pool_and_label(np.zeros((2, 2)), np.zeros((2, 3)))


def test_pool_empty_sample():
    with pytest.raises(ValueError):
        pool_and_label(np.zeros((0, 2)), np.zeros((2, 2)))


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2), min_size=1, max_size=20),
       st.lists(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_pool_round_trip(a, b):
    d = pool_and_label(a, b)
    assert np.array_equal(d.points[: len(a)], np.array(a))
    assert np.array_equal(d.points[len(a):], np.array(b))


def test_sample_rejects_nan():
    with pytest.raises(ValueError):
        Sample(np.array([[1.0], [np.nan]]))


def test_labeled_dataset_checks():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 1)), [0])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1)), [0, 2])
    assert not LabeledDataset(np.zeros((2, 1)), [1, 1]).has_both_labels()


def test_pvalue_extremes():
    assert permutation_pvalue(5.0, [1.0] * 99) == 1 / 100
    assert permutation_pvalue(0.0, [1.0] * 99) == 1.0
    # ties do not count as exceedances
    assert permutation_pvalue(1.0, [1.0] * 9) == 0.1


@given(st.floats(-10, 10), st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_pvalue_on_grid(obs, null):
    m = len(null)
    p = permutation_pvalue(obs, null)
    assert 1 / (m + 1) <= p <= 1
    assert abs(p * (m + 1) - round(p * (m + 1))) < 1e-9


def test_test_result_from_draws():
    r = TestResult.from_draws(0.5, [0.1, 0.9, 0.6], RngStream(4, 2))
    assert r.p_value == 3 / 4
    assert r.m_used == 3
    assert r.seed == (4, 2)


def test_csv_round_trip_with_and_without_header(tmp_path):
    pts = np.array([[1.5, -2.0], [3.25, 4.0]])
    f = tmp_path / "a.csv"
    write_sample_csv(f, pts, header=["a", "b"])
    assert np.array_equal(read_sample_csv(f).points, pts)
    g = tmp_path / "b.csv"
    g.write_text("1.5,-2\n3.25,4\n")
    assert np.array_equal(read_sample_csv(g).points, pts)


@pytest.mark.parametrize("text", ["1,2\n3\n", "1,2\n3,x\n", "", "a,b\n", "1;5,2\n"])
def test_malformed_csv(tmp_path, text):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(MalformedCSVError):
        read_sample_csv(f)


def test_parallel_map_preserves_order():
    items = list(range(50))
    for threads in (1, 2, 5):
        assert parallel_map(lambda i: i * i, items, threads) == [i * i for i in items]


def test_resolve_threads_env(monkeypatch):
    monkeypatch.setenv("EMUVAL_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("EMUVAL_THREADS", "x")
    with pytest.raises(ValueError):
        resolve_threads()
