"""Global goodness of fit across parameter space.

Parameters are drawn from a reference distribution, a local test is run at
each draw, and the resulting p-values are tested for uniformity.  The
uniformity p-value comes from a Monte-Carlo null of the same statistic on
i.i.d. uniforms, which is exact at any number of draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import RngStream, TestResult, format_csv, parallel_map
from .localtest import LocalTestConfig, local_test
from .stats import cvm_uniformity, ks_uniformity

__all__ = [
    "GridReference",
    "BoxReference",
    "WeightedReference",
    "GlobalTestConfig",
    "GlobalTestResult",
    "LocalTestError",
    "global_test",
    "uniformity_pvalue",
    "uniformity_null",
    "uniformity_statistic",
    "null_quantile_schedule",
    "even_grid",
]

UNIFORMITY = ("ks", "cvm")


def _as_theta_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("parameter values must form a nonempty (k, p) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter values must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class GridReference:
    """Uniform over a finite set of parameter values, drawn with replacement."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", _as_theta_matrix(self.grid))

    def sample(self, b: int, rng: RngStream) -> np.ndarray:
        idx = rng.generator().integers(0, self.grid.shape[0], size=b)
        return self.grid[idx]

    def to_dict(self) -> dict:
        return {"kind": "grid", "grid": self.grid.tolist()}


@dataclass(frozen=True, eq=False)
class BoxReference:
    """Uniform over an axis-aligned box."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self) -> None:
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.shape != high.shape or np.any(high < low):
            raise ValueError("box bounds must match in shape with low <= high")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def sample(self, b: int, rng: RngStream) -> np.ndarray:
        u = rng.generator().random((b, self.low.size))
        return self.low + u * (self.high - self.low)

    def to_dict(self) -> dict:
        return {"kind": "box", "low": self.low.tolist(), "high": self.high.tolist()}


@dataclass(frozen=True, eq=False)
class WeightedReference:
    """Explicit parameter values with (unnormalised) probabilities."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = _as_theta_matrix(self.points)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != pts.shape[0] or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per point, with positive sum")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w / w.sum())

    def sample(self, b: int, rng: RngStream) -> np.ndarray:
        idx = rng.generator().choice(self.points.shape[0], size=b, p=self.weights)
        return self.points[idx]

    def to_dict(self) -> dict:
        return {"kind": "weighted", "points": self.points.tolist(), "weights": self.weights.tolist()}


def even_grid(low: Sequence[float], high: Sequence[float], per_axis: int | Sequence[int]) -> np.ndarray:
    """Cartesian grid of evenly spaced values (endpoints included)."""
    low = np.atleast_1d(np.asarray(low, dtype=np.float64))
    high = np.atleast_1d(np.asarray(high, dtype=np.float64))
    counts = np.broadcast_to(np.asarray(per_axis), low.shape)
    axes = [np.linspace(lo, hi, int(c)) for lo, hi, c in zip(low, high, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class GlobalTestConfig:
    reference: Any
    b: int = 100
    local: LocalTestConfig = field(default_factory=LocalTestConfig)
    uniformity: str = "ks"
    n_null: int = 999

    def __post_init__(self) -> None:
        if self.b < 2:
            raise ValueError("b must be >= 2")
        if self.n_null < 1:
            raise ValueError("n_null must be >= 1")
        if self.uniformity not in UNIFORMITY:
            raise ValueError(f"uniformity must be one of {UNIFORMITY}")
        if not hasattr(self.reference, "sample"):
            raise ValueError("reference must provide sample(b, rng)")

    def to_dict(self) -> dict:
        ref = self.reference.to_dict() if hasattr(self.reference, "to_dict") else {"kind": type(self.reference).__name__}
        return {
            "reference": ref,
            "b": self.b,
            "local": self.local.to_dict(),
            "uniformity": self.uniformity,
            "n_null": self.n_null,
        }


@dataclass(frozen=True, eq=False)
class GlobalTestResult:
    thetas: np.ndarray
    local_p: np.ndarray
    statistic: float
    global_p: float
    seed: tuple[int, int]
    uniformity: str = "ks"
    local_results: tuple[TestResult, ...] = ()

    def to_dict(self) -> dict:
        return {
            "theta": _theta_list(self.thetas),
            "local_p": [float(p) for p in self.local_p],
            "statistic": self.statistic,
            "global_p": self.global_p,
            "uniformity": self.uniformity,
            "seed": list(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """One row per draw: theta coordinates then the local p-value."""
        dim = self.thetas.shape[1]
        header = ["theta"] if dim == 1 else [f"theta_{j + 1}" for j in range(dim)]
        rows = [list(t) + [p] for t, p in zip(self.thetas, self.local_p)]
        return format_csv(rows, header + ["p"])


def _theta_list(thetas: np.ndarray) -> list:
    if thetas.shape[1] == 1:
        return [float(t) for t in thetas[:, 0]]
    return [[float(v) for v in t] for t in thetas]


class LocalTestError(RuntimeError):
    """A local test failed; carries the offending parameter and completed results."""

    def __init__(self, index: int, theta, cause: BaseException, partial: list[tuple[Any, float]]):
        self.index = index
        self.theta = theta
        self.cause = cause
        self.partial = partial
        super().__init__(f"local test {index} failed at theta={np.asarray(theta).tolist()}: {cause}")


def theta_value(row: np.ndarray):
    """Scalar for one-parameter models, vector otherwise."""
    return float(row[0]) if row.shape[0] == 1 else row.copy()


def global_test(cfg: GlobalTestConfig, simulator, emulator, rng: RngStream, *,
                threads: int | None = None) -> GlobalTestResult:
    thetas = _as_theta_matrix(cfg.reference.sample(cfg.b, rng.substream(0)))
    if thetas.shape[0] != cfg.b:
        raise ValueError(f"reference returned {thetas.shape[0]} draws, expected {cfg.b}")
    local_stream = rng.substream(1)

    def run(i: int):
        try:
            return local_test(theta_value(thetas[i]), simulator, emulator, cfg.local,
                              local_stream.substream(i), threads=1)
        except Exception as exc:  # noqa: BLE001 - reported with theta attached below
            return exc

    outcomes = parallel_map(run, range(cfg.b), threads)
    for i, out in enumerate(outcomes):
        if isinstance(out, BaseException):
            partial = [(theta_value(thetas[j]), o.p_value) for j, o in enumerate(outcomes)
                       if isinstance(o, TestResult)]
            raise LocalTestError(i, theta_value(thetas[i]), out, partial) from out

    local_p = np.array([o.p_value for o in outcomes])
    stat = uniformity_statistic(local_p, cfg.uniformity)
    gp = uniformity_pvalue(stat, cfg.b, cfg.uniformity, cfg.n_null, rng.substream(2))
    return GlobalTestResult(thetas, local_p, stat, gp, rng.as_tuple(), cfg.uniformity, tuple(outcomes))


def uniformity_statistic(values, which: str) -> float:
    if which == "ks":
        return ks_uniformity(values)
    if which == "cvm":
        return cvm_uniformity(values)
    raise ValueError(f"uniformity must be one of {UNIFORMITY}")


def _rowwise_statistic(u: np.ndarray, which: str) -> np.ndarray:
    v = np.sort(u, axis=1)
    b = v.shape[1]
    i = np.arange(1, b + 1)
    if which == "ks":
        return np.maximum(np.max(i / b - v, axis=1), np.max(v - (i - 1) / b, axis=1))
    return 1.0 / (12.0 * b * b) + np.sum((v - (2 * i - 1) / (2.0 * b)) ** 2, axis=1) / b


def uniformity_null(b: int, which: str, n_null: int, rng: RngStream) -> np.ndarray:
    """Statistic values for ``n_null`` sets of ``b`` i.i.d. uniforms."""
    if b < 1 or n_null < 1:
        raise ValueError("b and n_null must be >= 1")
    if which not in UNIFORMITY:
        raise ValueError(f"uniformity must be one of {UNIFORMITY}")
    gen = rng.generator()
    out = np.empty(n_null)
    chunk = max(1, 2_000_000 // b)
    for start in range(0, n_null, chunk):
        stop = min(start + chunk, n_null)
        out[start:stop] = _rowwise_statistic(gen.random((stop - start, b)), which)
    return out


def uniformity_pvalue(stat_value: float, b: int, which: str, n_null: int, rng: RngStream) -> float:
    """(1 + #{null >= stat}) / (n_null + 1) against the exact finite-b null."""
    null = uniformity_null(b, which, n_null, rng)
    return float((1 + np.count_nonzero(null >= stat_value)) / (n_null + 1))


def null_quantile_schedule(schedule: Sequence[int], rng: RngStream, *, alpha: float = 0.05,
                            n_null: int = 999, which: str = "ks") -> list[dict]:
    """Null median and (1 - alpha) quantile of the uniformity statistic per b.

    Both should shrink towards zero as b grows.
    """
    if len(schedule) == 0:
        raise ValueError("schedule must be nonempty")
    rows = []
    for j, b in enumerate(schedule):
        null = uniformity_null(int(b), which, n_null, rng.substream(j))
        rows.append({
            "b": int(b),
            "median": float(np.median(null)),
            "quantile": float(np.quantile(null, 1.0 - alpha)),
        })
    return rows
