"""Where in feature space do two samples differ?

Each test point gets its own permutation p-value for the squared deviation of
the fitted label regression from the label rate; Benjamini-Hochberg then
controls the false discovery rate across points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionMismatchError, LabeledDataset, RngStream, as_points, format_csv, parallel_map
from .regress import RegressionMethod

__all__ = [
    "PointDiagnosis",
    "feature_space_test",
    "benjamini_hochberg",
    "partial_dependence",
    "train_test_split",
    "diagnosis_csv",
]


@dataclass(frozen=True, eq=False)
class PointDiagnosis:
    point: np.ndarray
    deviation: float
    direction: int
    p_value: float
    flagged: bool


def benjamini_hochberg(pvals, alpha: float) -> np.ndarray:
    """Step-up flags: all p at or below the largest p_(r) with p_(r) <= r * alpha / m."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    p = np.asarray(pvals, dtype=np.float64).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.isnan(p).any() or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("p-values must lie in [0, 1]")
    ordered = np.sort(p)
    ok = ordered <= alpha * np.arange(1, p.size + 1) / p.size
    if not ok.any():
        return np.zeros(p.size, dtype=bool)
    cutoff = ordered[np.nonzero(ok)[0][-1]]
    return p <= cutoff


def feature_space_test(train: LabeledDataset, test_points, method: RegressionMethod, m: int,
                       alpha: float, rng: RngStream, *, threads: int | None = None) -> list[PointDiagnosis]:
    """Per-point permutation test of m_hat(x) = pi1 with BH flagging.

    All test points share one schedule of label permutations, so their null
    draws come from the same refitted models.
    """
    train.require_both_labels()
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    query = as_points(test_points, "test points")
    if query.shape[1] != train.dim:
        raise DimensionMismatchError(f"train has dim {train.dim}, test points have dim {query.shape[1]}")
    predictor = method.predictor(train.points, query)
    pi1 = train.pi1
    labels = train.labels
    observed = predictor.predict(labels, rng.substream(0))
    deviation = (observed - pi1) ** 2

    perm_stream = rng.substream(1)
    fit_stream = rng.substream(2)
    permuted = np.stack([labels[perm_stream.substream(k).generator().permutation(train.n)] for k in range(m)])
    fit_rngs = [fit_stream.substream(k) for k in range(m)]
    if method.kind in ("knn", "constant"):
        null_pred = predictor.predict_many(permuted, fit_rngs)
    else:
        null_pred = np.vstack(parallel_map(lambda k: predictor.predict(permuted[k], fit_rngs[k]), range(m), threads))
    exceed = np.count_nonzero((null_pred - pi1) ** 2 > deviation[None, :], axis=0)
    pvals = (1 + exceed) / (m + 1)
    # a point whose fit sits exactly on the label rate carries no evidence
    flags = benjamini_hochberg(pvals, alpha) & (deviation > 0)
    direction = np.sign(observed - pi1).astype(int)
    return [
        PointDiagnosis(query[j].copy(), float(deviation[j]), int(direction[j]), float(pvals[j]), bool(flags[j]))
        for j in range(query.shape[0])
    ]


def train_test_split(data: LabeledDataset, train_fraction: float, rng: RngStream) -> tuple[LabeledDataset, np.ndarray]:
    """Random split of a pooled sample into a training set and held-out points."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    order = rng.generator().permutation(data.n)
    cut = int(round(train_fraction * data.n))
    if cut < 2 or cut >= data.n:
        raise ValueError("split leaves too few training or test points")
    return data.subset(np.sort(order[:cut])), data.points[np.sort(order[cut:])]


def partial_dependence(model, data, feature: int, grid: Sequence[float]) -> list[tuple[float, float]]:
    """Average prediction over ``data`` with one coordinate pinned to each grid value."""
    pts = as_points(data)
    if not 0 <= feature < pts.shape[1]:
        raise IndexError(f"feature index {feature} out of range for dim {pts.shape[1]}")
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    out = []
    work = pts.copy()
    for v in grid:
        work[:, feature] = v
        out.append((v, float(np.mean(model.predict(work)))))
    return out


def diagnosis_csv(diagnoses: Sequence[PointDiagnosis]) -> str:
    """One row per test point: coordinates, deviation, direction, p, flagged."""
    if not diagnoses:
        return format_csv([], ["deviation", "direction", "p_value", "flagged"])
    dim = diagnoses[0].point.shape[0]
    header = [f"x{j + 1}" for j in range(dim)] + ["deviation", "direction", "p_value", "flagged"]
    rows = [list(d.point) + [d.deviation, d.direction, d.p_value, d.flagged] for d in diagnoses]
    return format_csv(rows, header)
