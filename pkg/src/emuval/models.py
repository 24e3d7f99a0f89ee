"""Simulators, emulators and likelihood-based baselines.

Contents:

* the synthetic settings (a Beta model in 1000 dimensions, three toy
  two-sample settings, and a correlated-count setting) with exact samplers
  and log-densities plus their deliberately misspecified approximations;
* per-parameter emulators fit to training ensembles (Gaussian with one
  shared covariance, independent Poisson, integer-binned product KDE);
* posterior-quantile and rank baselines on a one-dimensional grid, a
  Monte-Carlo likelihood-ratio p-value, and a plug-in KL estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special, stats
from scipy.integrate import cumulative_trapezoid

from .core import RngStream, Sample, as_points, read_sample_csv, write_sample_csv

__all__ = [
    "SETTINGS",
    "SyntheticSetting",
    "SettingModel",
    "simulate",
    "approximate_simulate",
    "GammaPrior",
    "Ensemble",
    "make_ensembles",
    "save_ensembles",
    "load_ensembles",
    "GaussianModel",
    "PoissonModel",
    "KDEModel",
    "fit_gaussian_model",
    "fit_poisson_model",
    "fit_kde_model",
    "fit_model",
    "KLEstimate",
    "kl_estimate",
    "posterior_grid",
    "GridPosterior",
    "grid_posterior",
    "pq_statistic",
    "sbc_rank",
    "uniform_band",
    "histogram_counts",
    "approximate_lr_pvalue",
    "example1_draw",
    "example1_loglik_curve",
]

SETTINGS = ("example1", "bernoulli", "scaling", "mog", "poisson_synth")
_DOMAINS = {
    "bernoulli": (0.0, 1.0),
    "scaling": (0.0, 1.0),
    "mog": (-5.0, 5.0),
}
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
EXAMPLE1_DIM = 1000


def _log_normal(x: np.ndarray, mean, var) -> np.ndarray:
    return -_HALF_LOG_2PI - 0.5 * np.log(var) - 0.5 * (x - mean) ** 2 / var


def _is_integer(x: np.ndarray) -> np.ndarray:
    return np.all(x == np.round(x), axis=1)


# ---------------------------------------------------------------- settings


@dataclass(frozen=True)
class SyntheticSetting:
    """A named data-generating process with fixed dimension.

    ``example1`` is always 1000-dimensional and ``poisson_synth`` always
    2-dimensional; the three toy settings accept any D >= 1.
    """

    tag: str
    dim: int = 1

    def __post_init__(self) -> None:
        if self.tag not in SETTINGS:
            raise ValueError(f"unknown setting {self.tag!r}; choose from {SETTINGS}")
        if self.tag == "example1" and self.dim in (1, EXAMPLE1_DIM):
            object.__setattr__(self, "dim", EXAMPLE1_DIM)
        if self.tag == "poisson_synth" and self.dim in (1, 2):
            object.__setattr__(self, "dim", 2)
        if self.tag == "example1" and self.dim != EXAMPLE1_DIM:
            raise ValueError("example1 is 1000-dimensional")
        if self.tag == "poisson_synth" and self.dim != 2:
            raise ValueError("poisson_synth is 2-dimensional")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def theta_dim(self) -> int:
        return 2 if self.tag == "poisson_synth" else 1

    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        """Closed bounds of the parameter region (example1 is unbounded above)."""
        if self.tag == "poisson_synth":
            return np.zeros(2), np.ones(2)
        if self.tag == "example1":
            return np.array([0.0]), np.array([np.inf])
        lo, hi = _DOMAINS[self.tag]
        return np.array([lo]), np.array([hi])

    def check_theta(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=np.float64)).ravel()
        if t.size != self.theta_dim:
            raise ValueError(f"{self.tag} takes a {self.theta_dim}-dimensional parameter, got {t.size}")
        if not np.all(np.isfinite(t)):
            raise ValueError("parameter must be finite")
        lo, hi = self.domain()
        if self.tag == "example1":
            if t[0] <= 0:
                raise ValueError(f"example1 needs theta > 0, got {t[0]}")
        elif np.any(t < lo) or np.any(t > hi):
            raise ValueError(f"theta={t.tolist()} outside the {self.tag} domain [{lo.tolist()}, {hi.tolist()}]")
        return t

    def true_model(self) -> "SettingModel":
        return SettingModel(self, approximate=False)

    def approximate_model(self) -> "SettingModel":
        return SettingModel(self, approximate=True)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "dim": self.dim}


@dataclass(frozen=True)
class SettingModel:
    """Exact sampler and log-density of a setting, or of its approximation."""

    setting: SyntheticSetting
    approximate: bool = False

    @property
    def dim(self) -> int:
        return self.setting.dim

    def sample(self, n: int, theta, rng: RngStream) -> np.ndarray:
        t = self.setting.check_theta(theta)
        if n < 1:
            raise ValueError("n must be >= 1")
        gen = rng.generator()
        tag, d = self.setting.tag, self.dim
        if tag == "example1":
            if self.approximate:
                return gen.random((n, d))
            log_x, _ = _log_beta_pair(t[0], (n, d), gen)
            return np.exp(log_x)
        if tag == "poisson_synth":
            return self._poisson_synth(n, t, gen)
        th = t[0]
        if self.approximate:
            mean = th if tag == "bernoulli" else 0.0
            return gen.normal(mean, 1.0, size=(n, d))
        x = np.empty((n, d))
        if tag == "bernoulli":
            x[:, 0] = (gen.random(n) < th).astype(np.float64)
            x[:, 1:] = gen.normal(th, 1.0, size=(n, d - 1))
        elif tag == "scaling":
            x[:, 0] = gen.normal(0.0, math.sqrt(th), size=n)
            x[:, 1:] = gen.normal(0.0, 1.0, size=(n, d - 1))
        else:
            sign = np.where(gen.random(n) < 0.5, -1.0, 1.0)
            x[:, 0] = gen.normal(sign * th, 1.0)
            x[:, 1:] = gen.normal(0.0, 1.0, size=(n, d - 1))
        return x

    @staticmethod
    def _poisson_synth(n: int, t: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        lam = 1.0 if t[0] < 0.5 else 1e4
        x = gen.poisson(lam, size=(n, 2)).astype(np.float64)
        if t[1] < 0.5:
            x.sort(axis=1)
        return x

    def log_density(self, x, theta) -> np.ndarray:
        """Per-row log density (log mass for discrete coordinates)."""
        t = self.setting.check_theta(theta)
        x = as_points(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {x.shape[1]}")
        tag = self.setting.tag
        if tag == "example1":
            if self.approximate:
                inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
                return np.where(inside, 0.0, -np.inf)
            return example1_log_likelihood(x, t[0])
        if tag == "poisson_synth":
            return self._poisson_synth_log_mass(x, t)
        th = t[0]
        if self.approximate:
            mean = th if tag == "bernoulli" else 0.0
            return _log_normal(x, mean, 1.0).sum(axis=1)
        rest = _log_normal(x[:, 1:], th if tag == "bernoulli" else 0.0, 1.0).sum(axis=1)
        x1 = x[:, 0]
        with np.errstate(divide="ignore"):
            if tag == "bernoulli":
                first = np.where(x1 == 1.0, np.log(th), np.where(x1 == 0.0, np.log1p(-th), -np.inf))
            elif tag == "scaling":
                if th == 0.0:
                    first = np.where(x1 == 0.0, np.inf, -np.inf)
                else:
                    first = _log_normal(x1, 0.0, th)
            else:
                first = np.logaddexp(_log_normal(x1, -th, 1.0), _log_normal(x1, th, 1.0)) - math.log(2.0)
        return first + rest

    @staticmethod
    def _poisson_synth_log_mass(x: np.ndarray, t: np.ndarray) -> np.ndarray:
        lam = 1.0 if t[0] < 0.5 else 1e4
        ok = _is_integer(x) & np.all(x >= 0, axis=1)
        xs = np.where(ok[:, None], x, 0.0)
        single = stats.poisson.logpmf(xs, lam)
        out = single.sum(axis=1)
        if t[1] < 0.5:
            out = np.where(xs[:, 0] < xs[:, 1], out + math.log(2.0), out)
            out = np.where(xs[:, 0] > xs[:, 1], -np.inf, out)
        return np.where(ok, out, -np.inf)


def _log_beta_pair(theta: float, size, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """log X and log(1 - X) for X ~ Beta(theta, theta), exact even for tiny theta.

    Uses X = G1 / (G1 + G2) with log G = log Gamma(theta + 1) + log(U) / theta,
    so neither the gamma variates nor 1 - X underflow.
    """
    lg = np.log(gen.gamma(theta + 1.0, size=(2,) + tuple(size))) + np.log(gen.random((2,) + tuple(size))) / theta
    norm = np.logaddexp(lg[0], lg[1])
    return lg[0] - norm, lg[1] - norm


def example1_draw(theta: float, rng: RngStream, n_coords: int = EXAMPLE1_DIM) -> tuple[np.ndarray, float]:
    """One observation and its exact sufficient statistic sum(log x + log(1 - x)).

    The observation equals ``true_model().sample(1, theta, rng)``; the statistic
    is computed before rounding to float, so it stays exact where x itself
    saturates at 0 or 1.
    """
    if theta <= 0:
        raise ValueError("theta must be > 0")
    log_x, log_1mx = _log_beta_pair(theta, (1, n_coords), rng.generator())
    return np.exp(log_x), float(log_x.sum() + log_1mx.sum())


def example1_loglik_curve(sufficient: float, n_coords: int = EXAMPLE1_DIM) -> Callable[[np.ndarray], np.ndarray]:
    """Beta(theta, theta) log-likelihood over a grid of theta from the sufficient statistic."""
    return lambda grid: (np.asarray(grid) - 1.0) * sufficient - n_coords * special.betaln(grid, grid)


def example1_log_likelihood(x: np.ndarray, theta: float) -> np.ndarray:
    """Per-row sum of Beta(theta, theta) log densities (coordinates clipped off 0 and 1)."""
    xc = np.clip(x, 1e-300, 1.0 - 1e-16)
    s = np.log(xc).sum(axis=1) + np.log1p(-xc).sum(axis=1)
    return (theta - 1.0) * s - x.shape[1] * special.betaln(theta, theta)


def simulate(setting: SyntheticSetting, theta, n: int, rng: RngStream) -> Sample:
    """``n`` i.i.d. draws from the setting's true model at ``theta``."""
    return Sample(setting.true_model().sample(n, theta, rng))


def approximate_simulate(setting: SyntheticSetting, theta, n: int, rng: RngStream) -> Sample:
    """``n`` i.i.d. draws from the setting's misspecified approximation."""
    return Sample(setting.approximate_model().sample(n, theta, rng))


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) distribution on a scalar parameter."""

    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self) -> None:
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    def sample(self, b: int, rng: RngStream) -> np.ndarray:
        return rng.generator().gamma(self.shape, 1.0 / self.rate, size=(b, 1))

    def logpdf(self, theta) -> np.ndarray:
        return stats.gamma.logpdf(theta, self.shape, scale=1.0 / self.rate)

    def cdf(self, theta) -> np.ndarray:
        return stats.gamma.cdf(theta, self.shape, scale=1.0 / self.rate)

    def to_dict(self) -> dict:
        return {"kind": "gamma", "shape": self.shape, "rate": self.rate}


# ---------------------------------------------------------------- ensembles


def _key(theta) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(theta, dtype=np.float64)).ravel())


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Simulator draws at one parameter value, split into train and held-out test."""

    theta: tuple[float, ...]
    train: Sample
    test: Sample

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _key(self.theta))
        train = self.train if isinstance(self.train, Sample) else Sample(self.train)
        test = self.test if isinstance(self.test, Sample) else Sample(self.test)
        if train.dim != test.dim:
            raise ValueError("train and test must share a dimension")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)


def make_ensembles(setting: SyntheticSetting, thetas, n_train: int, n_test: int, rng: RngStream) -> list[Ensemble]:
    """One ensemble per parameter value; train and test come from separate draws."""
    model = setting.true_model()
    out = []
    for i, theta in enumerate(np.atleast_2d(np.asarray(thetas, dtype=np.float64).reshape(len(thetas), -1))):
        sub = rng.substream(i)
        out.append(Ensemble(theta, model.sample(n_train, theta, sub.substream(0)),
                            model.sample(n_test, theta, sub.substream(1))))
    return out


def save_ensembles(directory, ensembles: Sequence[Ensemble]) -> Path:
    """Write train/test CSVs per parameter value plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ens in enumerate(ensembles):
        train_name, test_name = f"theta_{i:04d}_train.csv", f"theta_{i:04d}_test.csv"
        write_sample_csv(directory / train_name, ens.train)
        write_sample_csv(directory / test_name, ens.test)
        entries.append({
            "theta": list(ens.theta),
            "train": train_name,
            "test": test_name,
            "n_train": ens.train.n,
            "n_test": ens.test.n,
        })
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"ensembles": entries}, indent=2) + "\n")
    return manifest


def load_ensembles(manifest) -> list[Ensemble]:
    """Read ensembles listed in a manifest; paths are relative to the manifest."""
    manifest = Path(manifest)
    doc = json.loads(manifest.read_text())
    base = manifest.parent
    try:
        entries = doc["ensembles"]
        return [
            Ensemble(e["theta"], read_sample_csv(base / e["train"]), read_sample_csv(base / e["test"]))
            for e in entries
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{manifest}: malformed ensemble manifest ({exc})") from None


# ---------------------------------------------------------------- emulators


class _Keyed:
    """Per-parameter state lookup shared by the fitted emulators."""

    kind = ""
    params: dict

    def thetas(self) -> list[tuple[float, ...]]:
        return list(self.params)

    def _get(self, theta):
        key = _key(theta)
        if key in self.params:
            return self.params[key]
        for k in self.params:
            if len(k) == len(key) and np.allclose(k, key, rtol=0.0, atol=1e-9):
                return self.params[k]
        raise KeyError(f"{self.kind} model is not defined at theta={list(key)}")

    def _rows(self, x) -> np.ndarray:
        x = as_points(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"model has dim {self.dim}, got {x.shape[1]}")
        return x


@dataclass(eq=False)
class GaussianModel(_Keyed):
    """Per-parameter means with one covariance shared by every parameter value."""

    params: dict
    covariance: np.ndarray
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self) -> None:
        self.dim = self.covariance.shape[0]
        self._chol = np.linalg.cholesky(self.covariance)
        self._logdet = 2.0 * np.log(np.diag(self._chol)).sum()

    def log_density(self, x, theta) -> np.ndarray:
        mean = self._get(theta)
        x = self._rows(x)
        z = np.linalg.solve(self._chol, (x - mean).T)
        return -0.5 * (z * z).sum(axis=0) - 0.5 * self._logdet - self.dim * _HALF_LOG_2PI

    def sample(self, n: int, theta, rng: RngStream) -> np.ndarray:
        mean = self._get(theta)
        z = rng.generator().standard_normal((n, self.dim))
        return mean + z @ self._chol.T


@dataclass(eq=False)
class PoissonModel(_Keyed):
    """Independent Poisson coordinates with per-parameter rates."""

    params: dict
    dim: int
    kind: str = field(default="poisson", init=False)

    def log_density(self, x, theta) -> np.ndarray:
        rates = self._get(theta)
        x = self._rows(x)
        ok = _is_integer(x) & np.all(x >= 0, axis=1)
        xs = np.where(ok[:, None], x, 0.0)
        out = stats.poisson.logpmf(xs, rates).sum(axis=1)
        return np.where(ok, out, -np.inf)

    def sample(self, n: int, theta, rng: RngStream) -> np.ndarray:
        rates = self._get(theta)
        return rng.generator().poisson(rates, size=(n, self.dim)).astype(np.float64)


@dataclass(eq=False)
class KDEModel(_Keyed):
    """Product-Gaussian kernel density per parameter, binned onto the integers.

    Samples are kernel draws rounded to the nearest integer; the mass of an
    integer vector is the kernel mass of its unit cell.
    """

    params: dict  # theta -> (centres (n, D), bandwidths (D,))
    dim: int
    kind: str = field(default="kde", init=False)

    def log_density(self, x, theta) -> np.ndarray:
        centres, h = self._get(theta)
        x = self._rows(x)
        out = np.full(x.shape[0], -np.inf)
        for r in np.nonzero(_is_integer(x))[0]:
            cell = _log_cell_mass((x[r] - 0.5 - centres) / h, (x[r] + 0.5 - centres) / h)
            out[r] = special.logsumexp(cell.sum(axis=1)) - math.log(centres.shape[0])
        return out

    def sample(self, n: int, theta, rng: RngStream) -> np.ndarray:
        centres, h = self._get(theta)
        gen = rng.generator()
        idx = gen.integers(0, centres.shape[0], size=n)
        return np.round(centres[idx] + gen.standard_normal((n, self.dim)) * h)


def _log_cell_mass(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """log(Phi(hi) - Phi(lo)) for lo < hi, using the tail that keeps precision."""
    upper = lo > 0
    big = np.where(upper, special.log_ndtr(-lo), special.log_ndtr(hi))
    small = np.where(upper, special.log_ndtr(-hi), special.log_ndtr(lo))
    with np.errstate(divide="ignore"):
        return big + np.log1p(-np.exp(small - big))


def _train_sets(ensembles: Iterable[Ensemble], min_n: int) -> list[tuple[tuple[float, ...], np.ndarray]]:
    out = []
    for ens in ensembles:
        if ens.train.n < min_n:
            raise ValueError(f"theta={list(ens.theta)}: need at least {min_n} training draws, got {ens.train.n}")
        out.append((ens.theta, ens.train.points))
    if not out:
        raise ValueError("no ensembles to fit")
    dims = {pts.shape[1] for _, pts in out}
    if len(dims) != 1:
        raise ValueError("ensembles disagree on dimension")
    return out


def fit_gaussian_model(ensembles: Iterable[Ensemble], ridge: float = 1e-6) -> GaussianModel:
    """Per-parameter sample means; covariance pooled within parameters across all of them."""
    sets = _train_sets(ensembles, 2)
    dim = sets[0][1].shape[1]
    scatter = np.zeros((dim, dim))
    total = 0
    params = {}
    for key, pts in sets:
        mean = pts.mean(axis=0)
        params[key] = mean
        centred = pts - mean
        scatter += centred.T @ centred
        total += pts.shape[0]
    dof = total - len(sets)
    if dof < 1:
        raise ValueError("too few training draws to pool a covariance")
    cov = scatter / dof + ridge * np.eye(dim)
    return GaussianModel(params, cov)


def fit_poisson_model(ensembles: Iterable[Ensemble], rate_floor: float = 1e-6) -> PoissonModel:
    sets = _train_sets(ensembles, 1)
    params = {key: np.maximum(pts.mean(axis=0), rate_floor) for key, pts in sets}
    return PoissonModel(params, sets[0][1].shape[1])


def kde_bandwidth(points: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Normal-reference bandwidth 1.06 * sd * n^(-1/5) per coordinate."""
    n = points.shape[0]
    sd = points.std(axis=0, ddof=1) if n > 1 else np.zeros(points.shape[1])
    return np.maximum(1.06 * sd * n ** (-0.2), floor)


def fit_kde_model(ensembles: Iterable[Ensemble]) -> KDEModel:
    sets = _train_sets(ensembles, 2)
    params = {key: (pts.copy(), kde_bandwidth(pts)) for key, pts in sets}
    return KDEModel(params, sets[0][1].shape[1])


_FITTERS: dict[str, Callable] = {
    "gaussian": fit_gaussian_model,
    "poisson": fit_poisson_model,
    "kde": fit_kde_model,
}


def fit_model(kind: str, ensembles: Iterable[Ensemble]):
    try:
        return _FITTERS[kind](ensembles)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(_FITTERS)}") from None


# ---------------------------------------------------------------- KL


@dataclass(frozen=True)
class KLEstimate:
    """Average negative log-likelihood of held-out draws (additive constant dropped)."""

    value: float
    n_infinite: int
    n_points: int

    def to_dict(self) -> dict:
        value = self.value if math.isfinite(self.value) else "inf"
        return {"kl": value, "n_infinite": self.n_infinite, "n_points": self.n_points}


def kl_estimate(model, ensembles: Iterable[Ensemble]) -> KLEstimate:
    """-(1/n) sum over parameters and test draws of log L_hat(x; theta), n = all test draws.

    Test draws where the model assigns zero density make the estimate +inf;
    their count is reported.
    """
    total = 0.0
    n = 0
    bad = 0
    for ens in ensembles:
        ld = np.asarray(model.log_density(ens.test.points, ens.theta), dtype=np.float64)
        neg_inf = np.isneginf(ld)
        bad += int(neg_inf.sum())
        total += float(ld[~neg_inf].sum())
        n += ld.size
    if n == 0:
        raise ValueError("no test draws")
    if bad:
        return KLEstimate(math.inf, bad, n)
    return KLEstimate(-total / n, 0, n)


# ---------------------------------------------------------------- PQ / SBC


def posterior_grid(lo: float = 1e-3, hi: float = 20.0, nodes: int = 2000) -> np.ndarray:
    return np.geomspace(lo, hi, nodes)


@dataclass(frozen=True, eq=False)
class GridPosterior:
    grid: np.ndarray
    cdf: np.ndarray

    def quantile_of(self, theta: float) -> float:
        return float(np.interp(theta, self.grid, self.cdf, left=0.0, right=1.0))

    def sample(self, size: int, rng: RngStream) -> np.ndarray:
        u = rng.generator().random(size)
        return np.interp(u, self.cdf, self.grid)


def grid_posterior(log_likelihood: Callable[[np.ndarray], np.ndarray], prior, grid: np.ndarray | None = None) -> GridPosterior:
    """Normalised posterior CDF on a grid, computed in log space."""
    grid = posterior_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    log_post = np.asarray(prior.logpdf(grid), dtype=np.float64) + np.asarray(log_likelihood(grid), dtype=np.float64)
    if not np.any(np.isfinite(log_post)):
        raise ValueError("posterior vanishes on the whole grid")
    dens = np.exp(log_post - np.max(log_post[np.isfinite(log_post)]))
    dens[~np.isfinite(dens)] = 0.0
    cdf = cumulative_trapezoid(dens, grid, initial=0.0)
    if cdf[-1] <= 0:
        # all mass on one node: a step at that node
        cdf = (grid >= grid[np.argmax(dens)]).astype(np.float64)
    else:
        cdf /= cdf[-1]
    return GridPosterior(grid, cdf)


def _grid_loglik(x, likelihood) -> Callable[[np.ndarray], np.ndarray]:
    if not hasattr(likelihood, "log_density"):
        return likelihood  # already a log-likelihood curve over the grid
    x = as_points(x)

    def f(grid: np.ndarray) -> np.ndarray:
        return np.array([float(np.sum(likelihood.log_density(x, t))) for t in grid])

    if isinstance(likelihood, SettingModel) and likelihood.setting.tag == "example1":
        # closed form across the whole grid at once
        if likelihood.approximate:
            return lambda grid: np.zeros_like(grid)
        xc = np.clip(x, 1e-300, 1.0 - 1e-16)
        s = float(np.log(xc).sum() + np.log1p(-xc).sum())
        count = x.size
        return lambda grid: (grid - 1.0) * s - count * special.betaln(grid, grid)
    return f


def pq_statistic(x, theta_true: float, prior, likelihood, grid: np.ndarray | None = None) -> float:
    """Posterior mass below ``theta_true`` given data ``x``.

    ``likelihood`` is a model with ``log_density`` or a callable mapping a
    parameter grid to log-likelihood values (``x`` is then unused).
    """
    post = grid_posterior(_grid_loglik(x, likelihood), prior, grid)
    return post.quantile_of(float(theta_true))


def sbc_rank(x, theta_true: float, prior, likelihood, n_posterior: int, rng: RngStream,
             grid: np.ndarray | None = None) -> int:
    """Number of posterior draws strictly below ``theta_true``."""
    if n_posterior < 1:
        raise ValueError("n_posterior must be >= 1")
    post = grid_posterior(_grid_loglik(x, likelihood), prior, grid)
    return int(np.count_nonzero(post.sample(n_posterior, rng) < float(theta_true)))


def histogram_counts(values, bins: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(lo, hi))
    return counts


def uniform_band(n: int, bins: int, level: float = 0.99) -> tuple[int, int]:
    """Central binomial interval for one bin's count when n values are uniform over ``bins`` bins."""
    tail = (1.0 - level) / 2.0
    p = 1.0 / bins
    return int(stats.binom.ppf(tail, n, p)), int(stats.binom.ppf(1.0 - tail, n, p))


# ---------------------------------------------------------------- LR p-value


def approximate_lr_pvalue(x, model, theta0, theta_grid, n_mc: int, rng: RngStream) -> float:
    """Monte-Carlo p-value of the likelihood ratio for a point null.

    The ratio compares the model likelihood of ``x`` (rows are i.i.d. draws)
    at ``theta0`` with its maximum over the grid; small ratios are evidence
    against the null.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    x = as_points(x)
    grid = [np.atleast_1d(np.asarray(t, dtype=np.float64)) for t in theta_grid]
    t0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    if not any(t.shape == t0.shape and np.allclose(t, t0, rtol=0.0, atol=1e-12) for t in grid):
        grid.append(t0)

    def theta_arg(t):
        return float(t[0]) if t.size == 1 else t

    def log_ratio(data: np.ndarray) -> float:
        at_null = float(np.sum(model.log_density(data, theta_arg(t0))))
        best = max(float(np.sum(model.log_density(data, theta_arg(t)))) for t in grid)
        return at_null - best

    observed = log_ratio(x)
    null = np.array([
        log_ratio(as_points(model.sample(x.shape[0], theta_arg(t0), rng.substream(j))))
        for j in range(n_mc)
    ])
    return float((1 + np.count_nonzero(null <= observed)) / (n_mc + 1))
