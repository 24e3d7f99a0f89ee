"""Two-sample statistics and uniformity statistics.

Every two-sample statistic is a pure function of a labelled pooled sample and
a random stream.  Statistic objects additionally expose :meth:`prepare`, which
does the label-independent work (distance matrices, neighbour weights, ranked
features) once for a fixed set of pooled points so that permutation nulls only
pay for the label-dependent part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import LabeledDataset, RngStream, as_points
from .regress import RegressionMethod

__all__ = [
    "regression_statistic",
    "mmd_statistic",
    "energy_statistic",
    "c2st_statistic",
    "ks_uniformity",
    "cvm_uniformity",
    "median_bandwidth",
    "RegressionStatistic",
    "MMDStatistic",
    "EnergyStatistic",
    "C2STStatistic",
    "make_statistic",
]

MODES = ("full", "split")


def _check_labels(labels: np.ndarray) -> None:
    s = labels.sum()
    if not 0.0 < s < labels.shape[0]:
        raise ValueError("dataset must contain both labels")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


# ---------------------------------------------------------------- evaluators


class _Evaluator:
    """Statistic bound to fixed pooled points; labels vary."""

    batched = False

    def evaluate(self, labels: np.ndarray, rng: RngStream) -> float:
        raise NotImplementedError

    def evaluate_many(self, labels: np.ndarray, rngs: Sequence[RngStream]) -> np.ndarray:
        return np.array([self.evaluate(y, r) for y, r in zip(labels, rngs)])


class _RegressionFull(_Evaluator):
    def __init__(self, method: RegressionMethod, points: np.ndarray):
        self.predictor = method.predictor(points)
        self.batched = method.kind in ("knn", "constant")

    def evaluate(self, labels, rng):
        labels = np.asarray(labels, dtype=np.float64)
        _check_labels(labels)
        pred = self.predictor.predict(labels, rng)
        return float(np.mean((pred - labels.mean()) ** 2))

    def evaluate_many(self, labels, rngs):
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        for row in labels:
            _check_labels(row)
        pred = self.predictor.predict_many(labels, rngs)
        pi1 = labels.mean(axis=1, keepdims=True)
        return np.mean((pred - pi1) ** 2, axis=1)


class _RegressionSplit(_Evaluator):
    def __init__(self, method: RegressionMethod, points: np.ndarray):
        if points.shape[0] < 4:
            raise ValueError("split mode needs at least 4 points")
        self.method = method
        self.points = points

    def evaluate(self, labels, rng):
        labels = np.asarray(labels, dtype=np.float64)
        _check_labels(labels)
        n = labels.shape[0]
        order = rng.substream(0).generator().permutation(n)
        fit_idx, eval_idx = order[: n // 2], order[n // 2 :]
        y_fit = labels[fit_idx]
        model = self.method.fit_arrays(self.points[fit_idx], y_fit, rng.substream(1))
        pred = model.predict(self.points[eval_idx])
        return float(np.mean((pred - y_fit.mean()) ** 2))


class _Quadratic(_Evaluator):
    """Statistics of the form sign * c' A c with c = (1-y)/n0 - y/n1."""

    batched = True

    def __init__(self, matrix: np.ndarray, sign: float):
        self.matrix = matrix
        self.sign = sign

    def _contrast(self, labels: np.ndarray) -> np.ndarray:
        n1 = labels.sum(axis=-1, keepdims=True)
        n0 = labels.shape[-1] - n1
        if np.any(n1 == 0) or np.any(n0 == 0):
            raise ValueError("dataset must contain both labels")
        return (1.0 - labels) / n0 - labels / n1

    def evaluate(self, labels, rng=None):
        c = self._contrast(np.asarray(labels, dtype=np.float64))
        return float(max(self.sign * (c @ self.matrix @ c), 0.0))

    def evaluate_many(self, labels, rngs=None):
        c = self._contrast(np.atleast_2d(np.asarray(labels, dtype=np.float64)))
        vals = self.sign * np.einsum("ij,ij->i", c @ self.matrix, c)
        return np.maximum(vals, 0.0)


class _C2ST(_Evaluator):
    def __init__(self, method: RegressionMethod, points: np.ndarray):
        if points.shape[0] < 4:
            raise ValueError("c2st needs at least 4 points")
        self.method = method
        self.points = points

    def evaluate(self, labels, rng):
        labels = np.asarray(labels, dtype=np.float64)
        _check_labels(labels)
        n = labels.shape[0]
        order = rng.substream(0).generator().permutation(n)
        train, held = order[: n // 2], order[n // 2 :]
        model = self.method.fit_arrays(self.points[train], labels[train], rng.substream(1))
        guess = (model.predict(self.points[held]) > 0.5).astype(np.float64)
        return float(np.mean(guess == labels[held]))


# ---------------------------------------------------------------- statistics


def median_bandwidth(points) -> float:
    """Median of the nonzero pairwise distances; 1.0 if there are none."""
    return _median_positive(pdist(as_points(points)))


def _median_positive(dists: np.ndarray) -> float:
    d = dists[dists > 0]
    return float(np.median(d)) if d.size else 1.0


@dataclass(frozen=True)
class RegressionStatistic:
    """Mean squared deviation of the fitted label regression from the label rate."""

    method: RegressionMethod = field(default_factory=RegressionMethod)
    tag: str = field(default="regression", init=False)

    def prepare(self, points: np.ndarray, mode: str = "full") -> _Evaluator:
        _check_mode(mode)
        points = as_points(points)
        if mode == "split":
            return _RegressionSplit(self.method, points)
        return _RegressionFull(self.method, points)

    def __call__(self, data: LabeledDataset, rng: RngStream, mode: str = "full") -> float:
        return self.prepare(data.points, mode).evaluate(data.labels, rng)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "regressor": self.method.to_dict()}


@dataclass(frozen=True)
class MMDStatistic:
    """Biased squared MMD with a Gaussian kernel at the median-distance bandwidth."""

    tag: str = field(default="mmd", init=False)

    def prepare(self, points: np.ndarray, mode: str = "full") -> _Evaluator:
        condensed = pdist(as_points(points))
        h = _median_positive(condensed)
        dist = squareform(condensed)
        return _Quadratic(np.exp(-(dist**2) / (2.0 * h * h)), 1.0)

    def __call__(self, data: LabeledDataset, rng: RngStream | None = None, mode: str = "full") -> float:
        return self.prepare(data.points).evaluate(data.labels)

    def to_dict(self) -> dict:
        return {"tag": self.tag}


@dataclass(frozen=True)
class EnergyStatistic:
    """Energy distance with the Euclidean norm."""

    tag: str = field(default="energy", init=False)

    def prepare(self, points: np.ndarray, mode: str = "full") -> _Evaluator:
        return _Quadratic(squareform(pdist(as_points(points))), -1.0)

    def __call__(self, data: LabeledDataset, rng: RngStream | None = None, mode: str = "full") -> float:
        return self.prepare(data.points).evaluate(data.labels)

    def to_dict(self) -> dict:
        return {"tag": self.tag}


@dataclass(frozen=True)
class C2STStatistic:
    """Held-out accuracy of the regression thresholded at one half."""

    method: RegressionMethod = field(default_factory=RegressionMethod)
    tag: str = field(default="c2st", init=False)

    def prepare(self, points: np.ndarray, mode: str = "full") -> _Evaluator:
        return _C2ST(self.method, as_points(points))

    def __call__(self, data: LabeledDataset, rng: RngStream, mode: str = "full") -> float:
        return self.prepare(data.points).evaluate(data.labels, rng)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "classifier": self.method.to_dict()}


def make_statistic(tag: str, method: RegressionMethod | None = None):
    """Build a statistic object from its tag."""
    method = method or RegressionMethod()
    if tag == "regression":
        return RegressionStatistic(method)
    if tag == "mmd":
        return MMDStatistic()
    if tag == "energy":
        return EnergyStatistic()
    if tag == "c2st":
        return C2STStatistic(method)
    raise ValueError(f"unknown statistic {tag!r}")


def regression_statistic(data: LabeledDataset, method: RegressionMethod, mode: str, rng: RngStream) -> float:
    """(1/n) sum (m_hat(X_i) - pi1)^2, in-sample (full) or on a held-out half (split)."""
    data.require_both_labels()
    return RegressionStatistic(method)(data, rng, mode)


def mmd_statistic(data: LabeledDataset) -> float:
    data.require_both_labels()
    return MMDStatistic()(data)


def energy_statistic(data: LabeledDataset) -> float:
    data.require_both_labels()
    return EnergyStatistic()(data)


def c2st_statistic(data: LabeledDataset, method: RegressionMethod, rng: RngStream) -> float:
    data.require_both_labels()
    return C2STStatistic(method)(data, rng)


def _sorted_unit(values) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("values must be nonempty")
    if np.isnan(v).any() or v[0] < 0.0 or v[-1] > 1.0:
        raise ValueError("values must lie in [0, 1]")
    return v


def ks_uniformity(values) -> float:
    """Largest gap between the empirical CDF of ``values`` and the uniform CDF."""
    v = _sorted_unit(values)
    b = v.size
    i = np.arange(1, b + 1)
    return float(max(np.max(i / b - v), np.max(v - (i - 1) / b)))


def cvm_uniformity(values) -> float:
    """Integrated squared gap between the empirical CDF and the uniform CDF."""
    v = _sorted_unit(values)
    b = v.size
    i = np.arange(1, b + 1)
    return float(1.0 / (12.0 * b * b) + np.sum((v - (2 * i - 1) / (2.0 * b)) ** 2) / b)
