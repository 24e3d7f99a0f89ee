"""Tests at a single parameter value.

``permutation_test`` compares two fixed samples by relabelling; ``local_test``
draws those samples from a simulator and an emulator first; ``mc_gof_test``
replaces the permutation null with fresh emulator draws, which suits small
observed samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import (
    RngStream,
    Sample,
    TestResult,
    as_points,
    parallel_map,
    pool_and_label,
)
from .regress import RegressionMethod
from .stats import MODES, RegressionStatistic

__all__ = [
    "LocalTestConfig",
    "SamplingError",
    "permutation_test",
    "local_test",
    "mc_gof_test",
    "check_resolution",
    "draw",
]

# Null replicates evaluated per vectorised batch.
_BATCH = 256


class SamplingError(RuntimeError):
    """A simulator or emulator failed to produce draws at ``theta``."""

    def __init__(self, theta, source: str, cause: BaseException):
        self.theta = theta
        self.source = source
        self.cause = cause
        super().__init__(f"{source} sampling failed at theta={_fmt_theta(theta)}: {cause}")


def _fmt_theta(theta) -> str:
    arr = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    return "[" + ", ".join(f"{v:g}" for v in arr) + "]"


@dataclass(frozen=True)
class LocalTestConfig:
    """What to compute at one parameter value.

    ``procedure`` selects the permutation null (default) or the Monte-Carlo
    goodness-of-fit null, in which case ``n_sim0`` is the observed sample size
    and ``n_sim1`` the emulator sample size.
    """

    statistic: Any = field(default_factory=RegressionStatistic)
    m_permutations: int = 99
    n_sim0: int = 100
    n_sim1: int = 100
    mode: str = "full"
    procedure: str = "permutation"

    def __post_init__(self) -> None:
        if self.m_permutations < 1:
            raise ValueError("m_permutations must be >= 1")
        if self.n_sim0 < 1 or self.n_sim1 < 1:
            raise ValueError("draw counts must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.procedure not in ("permutation", "mc_gof"):
            raise ValueError("procedure must be 'permutation' or 'mc_gof'")
        if self.procedure == "mc_gof" and not isinstance(self.statistic, RegressionStatistic):
            raise ValueError("the Monte-Carlo procedure uses the regression statistic")

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic.to_dict(),
            "m_permutations": self.m_permutations,
            "n_sim0": self.n_sim0,
            "n_sim1": self.n_sim1,
            "mode": self.mode,
            "procedure": self.procedure,
        }


def check_resolution(alpha: float, m: int) -> bool:
    """Warn and return False when the p-value grid is not finer than alpha.

    With alpha below 1/(m+1) the test cannot reject at all; at equality it
    rejects only when every null replicate falls below the observed value.
    """
    if alpha <= 1.0 / (m + 1):
        warnings.warn(
            f"with {m} null replicates the smallest p-value is 1/{m + 1} >= alpha={alpha}; "
            "raise the replicate count for a usable test",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    return True


def _null_statistics(evaluator, labels: np.ndarray, perm_stream: RngStream, stat_stream: RngStream,
                     m: int, schedule: np.ndarray | None, threads: int | None) -> np.ndarray:
    n = labels.shape[0]

    def permuted(j: int) -> np.ndarray:
        if schedule is not None:
            return labels[schedule[j]]
        return labels[perm_stream.substream(j).generator().permutation(n)]

    if evaluator.batched:
        out = []
        for start in range(0, m, _BATCH):
            idx = range(start, min(start + _BATCH, m))
            block = np.stack([permuted(j) for j in idx])
            out.append(evaluator.evaluate_many(block, [stat_stream.substream(j + 1) for j in idx]))
        return np.concatenate(out)
    return np.array(
        parallel_map(lambda j: evaluator.evaluate(permuted(j), stat_stream.substream(j + 1)), range(m), threads)
    )


def permutation_test(s0, s1, cfg: LocalTestConfig, rng: RngStream, *,
                     schedule=None, threads: int | None = None) -> TestResult:
    """Relabelling test of equal distributions for two samples.

    Without ``schedule`` the pooled rows are first put in a seeded random
    order, so neighbour tie-breaking by index cannot favour either sample.
    A ``schedule`` (M x n array of permutations of the pooled s0-then-s1
    order) is applied verbatim with no pre-shuffle.
    """
    data = pool_and_label(s0, s1)
    points, labels = data.points, data.labels
    n = data.n
    m = cfg.m_permutations
    if schedule is not None:
        schedule = np.asarray(schedule, dtype=np.int64)
        if schedule.shape != (m, n):
            raise ValueError(f"schedule must have shape ({m}, {n})")
        if not np.all(np.sort(schedule, axis=1) == np.arange(n)):
            raise ValueError("every schedule row must be a permutation")
    else:
        order = rng.substream(0).generator().permutation(n)
        points, labels = points[order], labels[order]

    evaluator = cfg.statistic.prepare(points, cfg.mode)
    stat_stream = rng.substream(2)
    observed = evaluator.evaluate(labels, stat_stream.substream(0))
    null = _null_statistics(evaluator, labels, rng.substream(1), stat_stream, m, schedule, threads)
    return TestResult.from_draws(observed, null, rng)


Sampler = Callable[[Any, int, RngStream], Any]


def draw(source, theta, n: int, rng: RngStream, what: str) -> np.ndarray:
    """Draw ``n`` points at ``theta`` from a sampler, model or fixed ensemble."""
    if isinstance(source, (Sample, np.ndarray)):
        return as_points(source)
    try:
        if hasattr(source, "sample"):
            out = source.sample(n, theta, rng)
        else:
            out = source(theta, n, rng)
        return as_points(out, what)
    except Exception as exc:  # noqa: BLE001 - any failure is reported with theta attached
        raise SamplingError(theta, what, exc) from exc


def local_test(theta0, simulator, emulator, cfg: LocalTestConfig, rng: RngStream, *,
               threads: int | None = None) -> TestResult:
    """Compare simulator and emulator draws at ``theta0``.

    ``simulator`` may be a callable ``(theta, n, rng)``, an object with
    ``sample(n, theta, rng)``, or a held-out ensemble used as is.  The emulator
    takes the same forms except a fixed ensemble.
    """
    s0 = draw(simulator, theta0, cfg.n_sim0, rng.substream(0), "simulator")
    if cfg.procedure == "mc_gof":
        sampler = _bind(emulator, theta0)
        return mc_gof_test(s0, sampler, cfg.n_sim1, cfg.m_permutations, cfg.statistic.method,
                           rng.substream(2), threads=threads)
    s1 = draw(emulator, theta0, cfg.n_sim1, rng.substream(1), "emulator")
    return permutation_test(s0, s1, cfg, rng.substream(2), threads=threads)


def _bind(emulator, theta):
    def sampler(n: int, rng: RngStream) -> np.ndarray:
        return draw(emulator, theta, n, rng, "emulator")

    return sampler


def mc_gof_test(s, emulator_sampler: Callable[[int, RngStream], Any], n_e: int, m: int,
                method: RegressionMethod | RegressionStatistic, rng: RngStream, *,
                mode: str = "full", threads: int | None = None) -> TestResult:
    """Goodness of fit of a fixed sample to an emulator via Monte-Carlo nulls.

    Each replicate draws a fresh observed-size sample and a fresh size-``n_e``
    sample from the emulator and recomputes the regression statistic.
    """
    if n_e < 1 or m < 1:
        raise ValueError("n_e and m must be >= 1")
    statistic = method if isinstance(method, RegressionStatistic) else RegressionStatistic(method)
    observed_pts = as_points(s, "s")
    size = observed_pts.shape[0]

    def sampled(n: int, stream: RngStream) -> np.ndarray:
        try:
            out = as_points(emulator_sampler(n, stream), "emulator sample")
        except SamplingError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise SamplingError(None, "emulator", exc) from exc
        if out.shape[0] != n:
            raise SamplingError(None, "emulator", ValueError(f"asked for {n} draws, got {out.shape[0]}"))
        return out

    def statistic_of(a: np.ndarray, b: np.ndarray, stream: RngStream) -> float:
        data = pool_and_label(a, b)
        return statistic(data, stream, mode)

    observed = statistic_of(observed_pts, sampled(n_e, rng.substream(0)), rng.substream(1))

    def replicate(j: int) -> float:
        sub = rng.substream(j + 2)
        return statistic_of(sampled(size, sub.substream(0)), sampled(n_e, sub.substream(1)), sub.substream(2))

    null = parallel_map(replicate, range(m), threads)
    return TestResult.from_draws(observed, null, rng)
