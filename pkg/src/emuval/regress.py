"""Plug-in estimators of m(x) = P(Y = 1 | X = x).

Three engines are provided: k-nearest-neighbour averaging, a random forest of
variance-reduction regression trees, and the constant model that always
predicts the training label rate.  :class:`RegressionMethod` bundles an engine
with its hyperparameters so that tests can refit the same estimator many times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import _forest
from .core import DimensionMismatchError, LabeledDataset, RngStream, as_points

__all__ = [
    "ForestParams",
    "RegressionMethod",
    "KNNModel",
    "ForestModel",
    "ConstantModel",
    "fit_knn",
    "fit_random_forest",
    "fit_constant",
    "predict",
    "estimate_cv_error",
    "pairwise_sqdist",
    "knn_neighbours",
    "knn_weights",
]

# Above this many features the Gram-matrix identity is used for distances.
_GRAM_MIN_DIM = 64


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances; exact (duplicates give 0) for small D."""
    if a.shape[1] < _GRAM_MIN_DIM:
        return cdist(a, b, "sqeuclidean")
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def knn_neighbours(d2: np.ndarray, k: int) -> np.ndarray:
    """0/1 (q, n) matrix marking each query's k nearest training points.

    Distance ties at the k-th neighbour are resolved in favour of the lowest
    training index.  Label sums through this matrix are exact integers, so
    dividing by k afterwards keeps constant labels exactly constant.
    """
    q, n = d2.shape
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if k == n:
        return np.ones((q, n))
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
    less = d2 < kth[:, None]
    tied = d2 == kth[:, None]
    need = k - less.sum(axis=1)
    take = less | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))
    return take.astype(np.float64)


def knn_weights(d2: np.ndarray, k: int) -> np.ndarray:
    """Row-stochastic version of :func:`knn_neighbours`."""
    return knn_neighbours(d2, k) / float(k)


@dataclass(frozen=True)
class ForestParams:
    """Random-forest hyperparameters; ``mtry=None`` means ceil(sqrt(D))."""

    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int = 5
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")

    def resolved_mtry(self, dim: int) -> int:
        mtry = math.ceil(math.sqrt(dim)) if self.mtry is None else self.mtry
        if not 1 <= mtry <= dim:
            raise ValueError(f"mtry must be in [1, {dim}], got {mtry}")
        return mtry


@dataclass(frozen=True)
class ConstantModel:
    pi1: float
    dim: int
    method: str = field(default="constant", init=False)

    def predict(self, x) -> np.ndarray:
        xq = _query(x, self.dim)
        return np.full(xq.shape[0], self.pi1)


@dataclass(frozen=True, eq=False)
class KNNModel:
    points: np.ndarray
    labels: np.ndarray
    k: int
    method: str = field(default="knn", init=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def predict(self, x) -> np.ndarray:
        xq = _query(x, self.dim)
        return (knn_neighbours(pairwise_sqdist(xq, self.points), self.k) @ self.labels) / self.k


@dataclass(frozen=True, eq=False)
class ForestModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray
    dim: int
    method: str = field(default="random_forest", init=False)

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0]

    def predict(self, x) -> np.ndarray:
        xq = np.ascontiguousarray(_query(x, self.dim))
        out = _forest.predict_forest(
            xq, self.feature, self.threshold, self.left, self.right, self.value, self.offsets
        )
        return np.clip(out, 0.0, 1.0)

    def tree_predictions(self, x) -> np.ndarray:
        xq = np.ascontiguousarray(_query(x, self.dim))
        return _forest.predict_trees(
            xq, self.feature, self.threshold, self.left, self.right, self.value, self.offsets
        )


def _query(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :] if dim > 1 or arr.shape[0] == 1 else arr[:, None]
    if arr.shape[1] != dim:
        raise DimensionMismatchError(f"model expects dim {dim}, got {arr.shape[1]}")
    return arr


def fit_constant(data: LabeledDataset) -> ConstantModel:
    return ConstantModel(pi1=data.pi1, dim=data.dim)


def fit_knn(data: LabeledDataset, k: int) -> KNNModel:
    if not 1 <= k <= data.n:
        raise ValueError(f"k must be in [1, {data.n}], got {k}")
    return KNNModel(points=data.points, labels=data.labels, k=int(k))


def _forest_draws(n: int, params: ForestParams, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Per-tree bootstrap multiplicities (n_trees, n) and split-sampling seeds."""
    gen = rng.generator()
    if params.bootstrap:
        draws = gen.integers(0, n, size=(params.n_trees, n), dtype=np.int64)
        offsets = np.arange(params.n_trees, dtype=np.int64)[:, None] * n
        counts = np.bincount((draws + offsets).ravel(), minlength=params.n_trees * n)
        counts = counts.reshape(params.n_trees, n)
    else:
        counts = np.ones((params.n_trees, n), dtype=np.int64)
    seeds = gen.integers(0, np.iinfo(np.int64).max, size=params.n_trees, dtype=np.int64)
    return counts, seeds.astype(np.uint64)


class _RankedPoints:
    """Label-independent preprocessing of a forest's training points."""

    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.ranks, self.uvals, self.n_unique = _forest.rank_features(self.points)

    def fit(self, labels, params: ForestParams, rng: RngStream) -> ForestModel:
        n, dim = self.points.shape
        if n < 2:
            raise ValueError("a forest needs at least 2 training points")
        mtry = params.resolved_mtry(dim)
        counts, seeds = _forest_draws(n, params, rng)
        y = np.ascontiguousarray(labels, dtype=np.float64)
        if y.shape != (n,):
            raise ValueError("labels must have one entry per training point")
        arrays = _forest.fit_forest(
            self.ranks, self.uvals, self.n_unique, y, counts, seeds, mtry, params.min_leaf
        )
        return ForestModel(*arrays, dim=dim)


def _fit_forest_arrays(points: np.ndarray, labels: np.ndarray, params: ForestParams, rng: RngStream) -> ForestModel:
    return _RankedPoints(points).fit(labels, params, rng)


def fit_random_forest(data: LabeledDataset, params: ForestParams, rng: RngStream) -> ForestModel:
    """Bagged variance-reduction trees; predictions average the leaf means."""
    return _fit_forest_arrays(data.points, data.labels, params, rng)


def predict(model, x) -> float | np.ndarray:
    """Estimate P(Y=1 | X=x); a single feature vector gives a float."""
    arr = np.asarray(x, dtype=np.float64)
    out = model.predict(arr)
    if arr.ndim == 1 and out.shape[0] == 1:
        return float(out[0])
    return out


class _Predictor:
    """Refit-and-predict closure over fixed training and query points."""

    def __init__(self, method: "RegressionMethod", train: np.ndarray, query: np.ndarray | None):
        self.method = method
        self.train = train
        self.query = train if query is None else query

    def predict(self, labels: np.ndarray, rng: RngStream) -> np.ndarray:
        return self.method.fit_arrays(self.train, labels, rng).predict(self.query)

    def predict_many(self, labels: np.ndarray, rngs: Sequence[RngStream]) -> np.ndarray:
        return np.vstack([self.predict(y, r) for y, r in zip(labels, rngs)])


class _KNNPredictor(_Predictor):
    def __init__(self, method, train, query):
        super().__init__(method, train, query)
        self.k = method.resolved_k(train.shape[0])
        self.members = knn_neighbours(pairwise_sqdist(self.query, train), self.k)

    def predict(self, labels, rng):
        return (self.members @ labels) / self.k

    def predict_many(self, labels, rngs):
        return (np.asarray(labels, dtype=np.float64) @ self.members.T) / self.k


class _ForestPredictor(_Predictor):
    def __init__(self, method, train, query):
        super().__init__(method, train, query)
        self.ranked = _RankedPoints(train)

    def predict(self, labels, rng):
        return self.ranked.fit(labels, self.method.forest, rng).predict(self.query)


class _ConstantPredictor(_Predictor):
    def predict(self, labels, rng):
        return np.full(self.query.shape[0], float(np.mean(labels)))

    def predict_many(self, labels, rngs):
        labels = np.asarray(labels, dtype=np.float64)
        return np.repeat(labels.mean(axis=1, keepdims=True), self.query.shape[0], axis=1)


@dataclass(frozen=True)
class RegressionMethod:
    """An estimator choice: ``knn`` (``k=None`` means round(sqrt(n))),
    ``random_forest`` with :class:`ForestParams`, or ``constant``."""

    kind: str = "random_forest"
    k: int | None = None
    forest: ForestParams = ForestParams()

    def __post_init__(self) -> None:
        if self.kind not in ("knn", "random_forest", "constant"):
            raise ValueError(f"unknown regression method {self.kind!r}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def knn(cls, k: int | None = None) -> "RegressionMethod":
        return cls("knn", k=k)

    @classmethod
    def random_forest(cls, params: ForestParams | None = None, **kwargs) -> "RegressionMethod":
        return cls("random_forest", forest=params or ForestParams(**kwargs))

    @classmethod
    def constant(cls) -> "RegressionMethod":
        return cls("constant")

    @property
    def tag(self) -> str:
        return {"knn": "nn", "random_forest": "rf", "constant": "constant"}[self.kind]

    def resolved_k(self, n: int) -> int:
        k = max(1, int(round(math.sqrt(n)))) if self.k is None else self.k
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        return k

    def fit(self, data: LabeledDataset, rng: RngStream):
        return self.fit_arrays(data.points, data.labels, rng)

    def fit_arrays(self, points: np.ndarray, labels: np.ndarray, rng: RngStream):
        if self.kind == "constant":
            return ConstantModel(pi1=float(np.mean(labels)), dim=points.shape[1])
        if self.kind == "knn":
            return KNNModel(points=points, labels=np.asarray(labels, dtype=np.float64), k=self.resolved_k(points.shape[0]))
        return _fit_forest_arrays(points, labels, self.forest, rng)

    def predictor(self, train: np.ndarray, query: np.ndarray | None = None) -> _Predictor:
        """Reusable refit-and-predict object; caches label-independent work."""
        if self.kind == "knn":
            return _KNNPredictor(self, train, query)
        if self.kind == "constant":
            return _ConstantPredictor(self, train, query)
        return _ForestPredictor(self, train, query)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "knn":
            out["k"] = self.k
        if self.kind == "random_forest":
            out.update(
                n_trees=self.forest.n_trees,
                mtry=self.forest.mtry,
                min_leaf=self.forest.min_leaf,
                bootstrap=self.forest.bootstrap,
            )
        return out


def kfold_partition(n: int, folds: int, rng: RngStream) -> list[np.ndarray]:
    perm = rng.generator().permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def estimate_cv_error(
    method: RegressionMethod,
    data: LabeledDataset,
    folds: int,
    rng: RngStream,
    partition: Sequence[np.ndarray] | None = None,
) -> float:
    """K-fold cross-validated mean of (Y - m_hat(X))^2.

    Each held-out fold is predicted by a model fit on the remaining folds.  The
    fit's random stream is keyed on the fold's smallest point index, so the
    estimate depends only on the partition and not on how folds are numbered.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if partition is None:
        if data.n < folds:
            raise ValueError(f"{data.n} points cannot fill {folds} folds")
        partition = kfold_partition(data.n, folds, rng.substream(0))
    parts = [np.asarray(p, dtype=np.int64) for p in partition]
    if any(p.size == 0 for p in parts):
        raise ValueError("every fold must be nonempty")
    sq_err = np.full(data.n, np.nan)
    fit_rng = rng.substream(1)
    for held in parts:
        train = np.setdiff1d(np.arange(data.n), held)
        if train.size == 0:
            raise ValueError("a fold leaves no training data")
        model = method.fit_arrays(data.points[train], data.labels[train], fit_rng.substream(int(held.min())))
        sq_err[held] = (data.labels[held] - model.predict(data.points[held])) ** 2
    if np.isnan(sq_err).any():
        raise ValueError("partition does not cover every point")
    return float(sq_err.mean())
