"""Shared value types, reproducible random streams and sample handling."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

__all__ = [
    "RngStream",
    "derive_substream",
    "Sample",
    "LabeledDataset",
    "TestResult",
    "as_points",
    "pool_and_label",
    "permutation_pvalue",
    "read_sample_csv",
    "write_sample_csv",
    "resolve_threads",
    "parallel_map",
    "DimensionMismatchError",
    "MalformedCSVError",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")
R = TypeVar("R")


class DimensionMismatchError(ValueError):
    """Raised when two samples (or a sample and a model) disagree on D."""


class MalformedCSVError(ValueError):
    """Raised when a sample file cannot be parsed as a numeric table."""


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming one reproducible random stream.

    The stream is backed by the counter-based Philox generator keyed on both
    words, so a stream can be recreated anywhere from its two integers and
    substreams never share state.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        return derive_substream(self, index)

    def spawn(self, count: int) -> list["RngStream"]:
        return [derive_substream(self, i) for i in range(count)]

    def as_tuple(self) -> tuple[int, int]:
        return (self.seed, self.stream_id)


def derive_substream(parent: RngStream, index: int) -> RngStream:
    """Child stream as a pure function of (seed, stream_id, index)."""
    if index < 0:
        raise ValueError(f"substream index must be >= 0, got {index}")
    child = _splitmix64(parent.stream_id ^ _splitmix64((int(index) + 1) * _GOLDEN & _MASK64))
    return RngStream(parent.seed, child)


def as_points(x, name: str = "sample") -> np.ndarray:
    """Validate and return an (n, D) float64 array.

    One-dimensional input is read as n draws of a scalar feature.
    """
    if isinstance(x, Sample):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one feature")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class Sample:
    """Draws from one distribution at one parameter value."""

    points: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(as_points(self.points), dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Pooled points with binary origin labels (1 = emulator / second sample)."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(as_points(self.points, "points"), copy=True)
        lab = np.array(self.labels, dtype=np.float64, copy=True).ravel()
        if pts.shape[0] != lab.shape[0]:
            raise ValueError("points and labels must have equal length")
        if pts.shape[0] < 2:
            raise ValueError("a labeled dataset needs at least 2 points")
        if not np.all((lab == 0.0) | (lab == 1.0)):
            raise ValueError("labels must be 0 or 1")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def pi1(self) -> float:
        return float(self.labels.mean())

    def has_both_labels(self) -> bool:
        return 0.0 < self.labels.sum() < self.n

    def require_both_labels(self) -> None:
        if not self.has_both_labels():
            raise ValueError("dataset must contain both labels")

    def relabeled(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.points, labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.points[idx], self.labels[idx])


def pool_and_label(s0, s1) -> LabeledDataset:
    """Stack s0 then s1, labelling s0 members 0 and s1 members 1."""
    a = as_points(s0, "s0")
    b = as_points(s1, "s1")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"s0 has dim {a.shape[1]}, s1 has dim {b.shape[1]}")
    labels = np.concatenate([np.zeros(a.shape[0]), np.ones(b.shape[0])])
    return LabeledDataset(np.vstack([a, b]), labels)


def permutation_pvalue(observed: float, null_draws: Sequence[float]) -> float:
    """(1 + #{null > observed}) / (M + 1); ties count toward non-rejection."""
    null = np.asarray(null_draws, dtype=np.float64)
    return float((1 + np.count_nonzero(null > observed)) / (null.size + 1))


@dataclass(frozen=True)
class TestResult:
    """Outcome of a permutation or Monte-Carlo test."""

    statistic: float
    p_value: float
    null_draws: tuple[float, ...]
    m_used: int
    seed: tuple[int, int]

    __test__ = False  # not a pytest class

    @classmethod
    def from_draws(cls, statistic: float, null_draws, rng: RngStream) -> "TestResult":
        null = tuple(float(v) for v in np.asarray(null_draws, dtype=np.float64))
        return cls(
            statistic=float(statistic),
            p_value=permutation_pvalue(statistic, null),
            null_draws=null,
            m_used=len(null),
            seed=rng.as_tuple(),
        )

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "null_draws": list(self.null_draws),
            "m_used": self.m_used,
            "seed": list(self.seed),
        }


def _parse_rows(rows: list[list[str]], source: str) -> np.ndarray:
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise MalformedCSVError(f"{source}: no data rows")

    def parse(row, lineno):
        try:
            return [float(cell) for cell in row]
        except ValueError:
            raise MalformedCSVError(f"{source}: non-numeric value on row {lineno}") from None

    try:
        first = [float(cell) for cell in rows[0]]
        body = rows[1:]
        values = [first]
        start = 2
    except ValueError:
        body = rows[1:]
        values = []
        start = 2
    values.extend(parse(r, i) for i, r in enumerate(body, start=start))
    if not values:
        raise MalformedCSVError(f"{source}: header but no data rows")
    width = len(values[0])
    if any(len(v) != width for v in values):
        raise MalformedCSVError(f"{source}: rows have differing column counts")
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise MalformedCSVError(f"{source}: NaN or Inf entries are not supported")
    return arr


def read_sample_csv(path) -> Sample:
    """Read one draw per row, D numeric columns, optional header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return Sample(_parse_rows(rows, str(path)))


def write_sample_csv(path, sample, header: Sequence[str] | None = None) -> None:
    pts = as_points(sample)
    with Path(path).open("w", newline="") as fh:
        fh.write(format_csv(pts, header))


def format_csv(rows, header: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else $EMUVAL_THREADS, else the number of cores."""
    if threads is None:
        env = os.environ.get("EMUVAL_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"EMUVAL_THREADS must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """Order-preserving map; results never depend on the worker count."""
    items = list(items)
    n_workers = min(resolve_threads(threads), max(len(items), 1))
    if n_workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
