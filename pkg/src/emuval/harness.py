"""Repeated-trial power estimates and the synthetic experiment drivers.

Every trial draws from its own substream of the run's seed, so a report is
fixed by (config, seed) and does not depend on how many worker threads ran
the trials.
"""

from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .core import RngStream, TestResult, format_csv, parallel_map, pool_and_label
from .globaltest import GlobalTestConfig, GlobalTestResult, GridReference, even_grid, global_test
from .localtest import LocalTestConfig, check_resolution, local_test
from .models import (
    GammaPrior,
    SyntheticSetting,
    example1_draw,
    example1_loglik_curve,
    fit_model,
    grid_posterior,
    histogram_counts,
    kl_estimate,
    make_ensembles,
    posterior_grid,
    uniform_band,
)
from .regress import ForestParams, RegressionMethod, estimate_cv_error
from .stats import C2STStatistic, EnergyStatistic, MMDStatistic, RegressionStatistic

__all__ = [
    "PowerRow",
    "PowerReport",
    "PerTrial",
    "TrialOutcome",
    "TrialError",
    "ConfigError",
    "run_trials",
    "estimate_power",
    "power_row",
    "EXPERIMENTS",
    "DEFAULTS",
    "resolve_config",
    "load_config_file",
    "run_experiment",
    "make_regressor",
    "make_example2_statistic",
]

EXPERIMENTS = ("example1", "example2", "poisson_synth")
FULL_SCALE_N_TRAIN = 10000


class ConfigError(ValueError):
    """Configuration file or override does not match the experiment schema."""


class TrialError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        self.cause = cause
        super().__init__(f"trial {index} failed: {cause}")


# ---------------------------------------------------------------- power


@dataclass(frozen=True)
class PowerRow:
    statistic: str
    trials: int
    rejections: int
    setting: str = ""
    model: str = ""
    n_train: int | None = None
    theta: str = "all"
    dim: int | None = None
    n: int | None = None
    median_statistic: float | None = None

    def __post_init__(self) -> None:
        if self.trials < 1 or not 0 <= self.rejections <= self.trials:
            raise ValueError("need trials >= 1 and 0 <= rejections <= trials")

    @property
    def power(self) -> float:
        return self.rejections / self.trials

    @property
    def se(self) -> float:
        p = self.power
        return math.sqrt(p * (1.0 - p) / self.trials)

    COLUMNS = ("setting", "model", "n_train", "theta", "dim", "statistic", "n",
               "trials", "rejections", "power", "se", "median_statistic")

    def as_list(self) -> list:
        vals = {
            "setting": self.setting, "model": self.model, "n_train": self.n_train, "theta": self.theta,
            "dim": self.dim, "statistic": self.statistic, "n": self.n, "trials": self.trials,
            "rejections": self.rejections, "power": self.power, "se": self.se,
            "median_statistic": self.median_statistic,
        }
        return ["" if vals[c] is None else vals[c] for c in self.COLUMNS]


@dataclass
class PowerReport:
    rows: list[PowerRow] = field(default_factory=list)

    def add(self, row: PowerRow) -> None:
        self.rows.append(row)

    def extend(self, rows: Sequence[PowerRow]) -> None:
        self.rows.extend(rows)

    def to_csv(self) -> str:
        return format_csv([r.as_list() for r in self.rows], list(PowerRow.COLUMNS))

    def find(self, **labels) -> list[PowerRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in labels.items())]


class PerTrial:
    """An emulator rebuilt for every trial, e.g. refit on fresh training ensembles."""

    def __init__(self, build: Callable[[RngStream], Any]):
        self.build = build


@dataclass(frozen=True, eq=False)
class TrialOutcome:
    index: int
    theta: Any
    p_value: float
    statistic: float
    result: TestResult | GlobalTestResult


def _m_of(test) -> int:
    return test.local.m_permutations if isinstance(test, GlobalTestConfig) else test.m_permutations


def run_trials(test: LocalTestConfig | GlobalTestConfig, truth, alt, trials: int, rng: RngStream, *,
               thetas: Sequence | None = None, threads: int | None = None) -> list[TrialOutcome]:
    """Run ``trials`` independent tests; local tests cycle through ``thetas``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(test, LocalTestConfig) and not thetas:
        raise ValueError("local-test trials need parameter values")

    def one(i: int):
        sub = rng.substream(i)
        try:
            emulator = alt.build(sub.substream(1)) if isinstance(alt, PerTrial) else alt
            if isinstance(test, GlobalTestConfig):
                res = global_test(test, truth, emulator, sub.substream(0), threads=1)
                return TrialOutcome(i, None, res.global_p, res.statistic, res)
            theta = thetas[i % len(thetas)]
            res = local_test(theta, truth, emulator, test, sub.substream(0), threads=1)
            return TrialOutcome(i, theta, res.p_value, res.statistic, res)
        except Exception as exc:  # noqa: BLE001 - re-raised with the trial index
            return TrialError(i, exc)

    outcomes = parallel_map(one, range(trials), threads)
    for out in outcomes:
        if isinstance(out, TrialError):
            raise out from out.cause
    return outcomes


def power_row(outcomes: Sequence[TrialOutcome], alpha: float, statistic: str, **labels) -> PowerRow:
    rejections = sum(1 for o in outcomes if o.p_value <= alpha)
    return PowerRow(statistic=statistic, trials=len(outcomes), rejections=rejections, **labels)


def estimate_power(test, truth, alt, trials: int, alpha: float, rng: RngStream, *,
                   thetas: Sequence | None = None, threads: int | None = None,
                   statistic: str | None = None, **labels) -> PowerRow:
    """Fraction of trials whose p-value is at most ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    check_resolution(alpha, _m_of(test))
    outcomes = run_trials(test, truth, alt, trials, rng, thetas=thetas, threads=threads)
    stat = test.local.statistic if isinstance(test, GlobalTestConfig) else test.statistic
    return power_row(outcomes, alpha, statistic or stat.tag, **labels)


# ---------------------------------------------------------------- config

DEFAULTS: dict[str, dict[str, Any]] = {
    "example1": {
        "n_replicates": 500,
        "n_posterior": 19,
        "grid_nodes": 2000,
        "bins": 20,
        "b": 100,
        "n_sim": 100,
        "m_permutations": 99,
        "n_null": 999,
        "regressor": "knn",
        "k": 0,
        "n_trees": 100,
        "uniformity": "ks",
        "meta_trials": 1,
        "alpha": 0.05,
        "band_level": 0.99,
    },
    "example2": {
        "settings": ["bernoulli", "scaling", "mog"],
        "dims": [1, 5, 10, 50, 100],
        "n": 100,
        "trials": 100,
        "theta_points": 20,
        "statistics": ["rf", "nn", "mmd", "energy", "c2st_rf", "c2st_nn"],
        "m_permutations": 99,
        "alpha": 0.05,
        "k": 0,
        "n_trees": 100,
        "cv_folds": 5,
        "cv_dim": 100,
    },
    "poisson_synth": {
        "n_train": [50, 100, 2000],
        "full_scale": False,
        "n_sim": 200,
        "n_test": 200,
        "grid_per_axis": 10,
        "b": 100,
        "m_permutations": 99,
        "n_null": 999,
        "models": ["gaussian", "poisson", "kde"],
        "include_truth": True,
        "trials": 10,
        "statistics": ["regression", "mmd"],
        "regressor": "rf",
        "k": 0,
        "n_trees": 100,
        "uniformity": "ks",
        "alpha": 0.05,
    },
}

_CHOICES = {
    "regressor": {"knn", "rf"},
    "uniformity": {"ks", "cvm"},
    "settings": {"bernoulli", "scaling", "mog"},
    "statistics": {"rf", "nn", "mmd", "energy", "c2st_rf", "c2st_nn", "regression"},
    "models": {"gaussian", "poisson", "kde"},
}


def _check_value(name: str, key: str, value, default):
    where = f"{name}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
    elif isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{where} must be a nonempty list")
        kind = type(default[0])
        if not all(isinstance(v, kind) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where} entries must be of type {kind.__name__}")
        value = list(value)
    allowed = _CHOICES.get(key)
    if allowed is not None:
        items = value if isinstance(value, list) else [value]
        bad = [v for v in items if v not in allowed]
        if bad:
            raise ConfigError(f"{where}: unsupported value(s) {bad}; choose from {sorted(allowed)}")
    return value


def _check_ranges(name: str, cfg: dict) -> None:
    positive = [k for k in ("n_replicates", "n_posterior", "grid_nodes", "bins", "b", "n_sim", "m_permutations",
                            "n_null", "n_trees", "meta_trials", "n", "trials", "theta_points", "cv_folds",
                            "cv_dim", "n_test", "grid_per_axis") if k in cfg]
    for k in positive:
        if cfg[k] < 1:
            raise ConfigError(f"{name}.{k} must be >= 1")
    if "alpha" in cfg and not 0.0 < cfg["alpha"] < 1.0:
        raise ConfigError(f"{name}.alpha must be in (0, 1)")
    if "k" in cfg and cfg["k"] < 0:
        raise ConfigError(f"{name}.k must be >= 0 (0 selects round(sqrt(n)))")
    for key in ("dims", "n_train"):
        if key in cfg and any(v < 1 for v in cfg[key]):
            raise ConfigError(f"{name}.{key} entries must be >= 1")
    if cfg.get("b", 2) < 2:
        raise ConfigError(f"{name}.b must be >= 2")
    if name == "poisson_synth" and min(cfg["n_train"]) < 2:
        raise ConfigError("poisson_synth.n_train entries must be >= 2")


def load_config_file(path) -> dict:
    """Parse a TOML file; a table named after the experiment may hold its keys."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None


def resolve_config(name: str, config: dict | str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file or dict values, then explicit overrides; validated."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    raw = load_config_file(config) if isinstance(config, (str, Path)) else dict(config or {})
    if name in raw and isinstance(raw[name], dict):
        outer = {k: v for k, v in raw.items() if k != name}
        raw = {**outer, **raw[name]}
    raw.pop("seed", None)
    defaults = DEFAULTS[name]
    merged = {k: (list(v) if isinstance(v, list) else v) for k, v in defaults.items()}
    for source in (raw, overrides or {}):
        for key, value in source.items():
            if key not in defaults:
                raise ConfigError(f"{name}: unknown key {key!r}")
            merged[key] = _check_value(name, key, value, defaults[key])
    _check_ranges(name, merged)
    return merged


def config_seed(config) -> int | None:
    """Seed stored in a config file or dict, if any."""
    raw = load_config_file(config) if isinstance(config, (str, Path)) else dict(config or {})
    seed = raw.get("seed")
    if seed is None:
        for value in raw.values():
            if isinstance(value, dict) and "seed" in value:
                seed = value["seed"]
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a nonnegative integer")
    return seed


# ---------------------------------------------------------------- builders


def make_regressor(kind: str, k: int = 0, n_trees: int = 100) -> RegressionMethod:
    if kind in ("knn", "nn"):
        return RegressionMethod.knn(k or None)
    if kind in ("rf", "random_forest"):
        return RegressionMethod.random_forest(ForestParams(n_trees=n_trees))
    raise ConfigError(f"unknown regressor {kind!r}")


def make_example2_statistic(tag: str, k: int = 0, n_trees: int = 100):
    if tag == "rf":
        return RegressionStatistic(make_regressor("rf", k, n_trees))
    if tag == "nn":
        return RegressionStatistic(make_regressor("knn", k, n_trees))
    if tag == "mmd":
        return MMDStatistic()
    if tag == "energy":
        return EnergyStatistic()
    if tag == "c2st_rf":
        return C2STStatistic(make_regressor("rf", k, n_trees))
    if tag == "c2st_nn":
        return C2STStatistic(make_regressor("knn", k, n_trees))
    raise ConfigError(f"unknown statistic {tag!r}")


def example2_thetas(setting: str, points: int) -> list[float]:
    lo, hi = SyntheticSetting(setting).domain()
    return [float(v) for v in np.linspace(lo[0], hi[0], points)]


# ---------------------------------------------------------------- output


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "emuval": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _write_manifest(out: Path, name: str, cfg: dict, seed: int, files: Sequence[str]) -> None:
    _dump_json(out / "manifest.json", {
        "experiment": name,
        "config": cfg,
        "seed": seed,
        "versions": _versions(),
        "files": sorted(files),
    })


# ---------------------------------------------------------------- experiments


def run_experiment(name: str, config=None, out_dir=".", seed: int = 0, *, threads: int | None = None,
                   overrides: dict | None = None) -> Path:
    """Run one named experiment and write its report files into ``out_dir``."""
    cfg = resolve_config(name, config, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(seed)
    runner = {"example1": _run_example1, "example2": _run_example2, "poisson_synth": _run_poisson_synth}[name]
    files = runner(cfg, rng, out, threads)
    _write_manifest(out, name, cfg, seed, list(files) + ["manifest.json"])
    return out


def _hist_rows(kind: str, model: str, values, bins: int, lo: float, hi: float, level: float) -> list[list]:
    counts = histogram_counts(values, bins, lo, hi)
    band = uniform_band(len(values), bins, level)
    edges = np.linspace(lo, hi, bins + 1)
    return [[kind, model, j, edges[j], edges[j + 1], int(c), band[0], band[1]] for j, c in enumerate(counts)]


def pq_sbc_replicates(n_replicates: int, n_posterior: int, grid_nodes: int, rng: RngStream,
                      flat: bool) -> tuple[np.ndarray, np.ndarray]:
    """Posterior quantiles and ranks for the Beta model under a Gamma(1, 1) prior.

    Each replicate draws a parameter from the prior and one observation from
    the true model; ``flat`` swaps in the constant likelihood for inference.
    """
    prior = GammaPrior()
    grid = posterior_grid(nodes=grid_nodes)
    quantiles = np.empty(n_replicates)
    ranks = np.empty(n_replicates, dtype=np.int64)
    for i in range(n_replicates):
        sub = rng.substream(i)
        theta = float(prior.sample(1, sub.substream(0))[0, 0])
        _, suff = example1_draw(theta, sub.substream(1))
        curve = (lambda g: np.zeros_like(g)) if flat else example1_loglik_curve(suff)
        post = grid_posterior(curve, prior, grid)
        quantiles[i] = post.quantile_of(theta)
        ranks[i] = int(np.count_nonzero(post.sample(n_posterior, sub.substream(2)) < theta))
    return quantiles, ranks


def _run_example1(cfg: dict, rng: RngStream, out: Path, threads) -> list[str]:
    setting = SyntheticSetting("example1")
    method = make_regressor(cfg["regressor"], cfg["k"], cfg["n_trees"])
    local = LocalTestConfig(RegressionStatistic(method), cfg["m_permutations"], cfg["n_sim"], cfg["n_sim"])
    gcfg = GlobalTestConfig(GammaPrior(), cfg["b"], local, cfg["uniformity"], cfg["n_null"])
    hist, local_rows, report, global_out = [], [], PowerReport(), {}
    bins, level = cfg["bins"], cfg["band_level"]
    for j, (label, emulator) in enumerate((("true", setting.true_model()), ("flat", setting.approximate_model()))):
        q, r = pq_sbc_replicates(cfg["n_replicates"], cfg["n_posterior"], cfg["grid_nodes"],
                                 rng.substream(0).substream(j), flat=label == "flat")
        hist += _hist_rows("pq", label, q, bins, 0.0, 1.0, level)
        rank_bins = cfg["n_posterior"] + 1
        hist += _hist_rows("sbc", label, r, rank_bins, -0.5, cfg["n_posterior"] + 0.5, level)
        outcomes = run_trials(gcfg, setting.true_model(), emulator, cfg["meta_trials"],
                              rng.substream(1).substream(j), threads=threads)
        first = outcomes[0].result
        hist += _hist_rows("local_p", label, first.local_p, bins, 0.0, 1.0, level)
        local_rows += [[label, t[0], p] for t, p in zip(first.thetas, first.local_p)]
        report.add(power_row(outcomes, cfg["alpha"], "global_regression", setting="example1", model=label,
                             n=cfg["n_sim"]))
        global_out[label] = {"first": first.to_dict(), "global_p": [o.p_value for o in outcomes]}
    (out / "histograms.csv").write_text(format_csv(
        hist, ["kind", "model", "bin", "lo", "hi", "count", "band_lo", "band_hi"]))
    (out / "local_pvalues.csv").write_text(format_csv(local_rows, ["model", "theta", "p"]))
    (out / "power.csv").write_text(report.to_csv())
    _dump_json(out / "global.json", global_out)
    return ["histograms.csv", "local_pvalues.csv", "power.csv", "global.json"]


def example2_power(setting: str, dim: int, statistics: Sequence[str], cfg: dict, rng: RngStream,
                   threads=None) -> list[PowerRow]:
    """Power rows (per theta and averaged) for one setting and dimension.

    All statistics see the same simulated data in a given trial.
    """
    st = SyntheticSetting(setting, dim)
    thetas = example2_thetas(setting, cfg["theta_points"])
    rows = []
    for tag in statistics:
        stat = make_example2_statistic(tag, cfg["k"], cfg["n_trees"])
        local = LocalTestConfig(stat, cfg["m_permutations"], cfg["n"], cfg["n"])
        outcomes = run_trials(local, st.true_model(), st.approximate_model(), cfg["trials"], rng,
                              thetas=thetas, threads=threads)
        labels = dict(setting=setting, dim=dim, n=cfg["n"])
        rows.append(power_row(outcomes, cfg["alpha"], tag, **labels))
        for theta in thetas:
            subset = [o for o in outcomes if o.theta == theta]
            if subset:
                rows.append(power_row(subset, cfg["alpha"], tag, theta=repr(theta), **labels))
    return rows


def example2_cv_errors(setting: str, dim: int, methods: dict[str, RegressionMethod], cfg: dict,
                       rng: RngStream) -> dict[str, float]:
    """Cross-validated squared error of each regressor, averaged over the theta grid."""
    st = SyntheticSetting(setting, dim)
    errors = {name: [] for name in methods}
    for i, theta in enumerate(example2_thetas(setting, cfg["theta_points"])):
        sub = rng.substream(i)
        data = pool_and_label(st.true_model().sample(cfg["n"], theta, sub.substream(0)),
                              st.approximate_model().sample(cfg["n"], theta, sub.substream(1)))
        for name, method in methods.items():
            errors[name].append(estimate_cv_error(method, data, cfg["cv_folds"], sub.substream(2)))
    return {name: float(np.mean(v)) for name, v in errors.items()}


def _run_example2(cfg: dict, rng: RngStream, out: Path, threads) -> list[str]:
    check_resolution(cfg["alpha"], cfg["m_permutations"])
    report = PowerReport()
    for si, setting in enumerate(cfg["settings"]):
        for di, dim in enumerate(cfg["dims"]):
            report.extend(example2_power(setting, dim, cfg["statistics"], cfg,
                                         rng.substream(0).substream(si).substream(di), threads))
    methods = {"rf": make_regressor("rf", cfg["k"], cfg["n_trees"]), "nn": make_regressor("knn", cfg["k"])}
    mise_rows = []
    for si, setting in enumerate(cfg["settings"]):
        errs = example2_cv_errors(setting, cfg["cv_dim"], methods, cfg, rng.substream(1).substream(si))
        mise_rows += [[setting, cfg["cv_dim"], name, err] for name, err in errs.items()]
    (out / "power.csv").write_text(report.to_csv())
    (out / "mise.csv").write_text(format_csv(mise_rows, ["setting", "dim", "regressor", "cv_error"]))
    return ["power.csv", "mise.csv"]


def poisson_synth_grid(per_axis: int) -> np.ndarray:
    return even_grid([0.0, 0.0], [1.0, 1.0], per_axis)


def poisson_emulator(kind: str, grid: np.ndarray, n_train: int, n_test: int = 1) -> PerTrial:
    """Emulator of ``kind`` refit on fresh training ensembles for every trial."""
    setting = SyntheticSetting("poisson_synth")

    def build(stream: RngStream):
        if kind == "truth":
            return setting.true_model()
        return fit_model(kind, make_ensembles(setting, grid, n_train, n_test, stream))

    return PerTrial(build)


# substream index reserved for the held-out KL ensembles (trials use 0, 1, ...)
_KL_STREAM = 1 << 40


def _run_poisson_synth(cfg: dict, rng: RngStream, out: Path, threads) -> list[str]:
    setting = SyntheticSetting("poisson_synth")
    grid = poisson_synth_grid(cfg["grid_per_axis"])
    n_trains = list(cfg["n_train"])
    if cfg["full_scale"]:
        n_trains[-1] = FULL_SCALE_N_TRAIN
    method = make_regressor(cfg["regressor"], cfg["k"], cfg["n_trees"])
    stats_by_tag = {"regression": RegressionStatistic(method), "mmd": MMDStatistic()}
    models = list(cfg["models"]) + (["truth"] if cfg["include_truth"] else [])
    report, local_rows, global_out, kl_rows = PowerReport(), [], [], []
    for ni, n_train in enumerate(n_trains):
        for mi, kind in enumerate(models):
            stream = rng.substream(ni).substream(mi)
            emulator = poisson_emulator(kind, grid, n_train)
            for tag in cfg["statistics"]:
                stat = stats_by_tag[tag]
                local = LocalTestConfig(stat, cfg["m_permutations"], cfg["n_sim"], cfg["n_sim"])
                gcfg = GlobalTestConfig(GridReference(grid), cfg["b"], local, cfg["uniformity"], cfg["n_null"])
                # same trial streams for every statistic: identical data and emulator fits
                outcomes = run_trials(gcfg, setting.true_model(), emulator, cfg["trials"], stream, threads=threads)
                raw = [r.statistic for o in outcomes for r in o.result.local_results]
                report.add(power_row(outcomes, cfg["alpha"], tag, setting="poisson_synth", model=kind,
                                     n_train=n_train, n=cfg["n_sim"], median_statistic=float(np.median(raw))))
                first = outcomes[0].result
                local_rows += [[kind, n_train, tag, t[0], t[1], p] for t, p in zip(first.thetas, first.local_p)]
                global_out.append({
                    "model": kind, "n_train": n_train, "statistic": tag,
                    "global_p": [o.p_value for o in outcomes], "first": first.to_dict(),
                })
            held_out = make_ensembles(setting, grid, n_train, cfg["n_test"], stream.substream(_KL_STREAM))
            fitted = setting.true_model() if kind == "truth" else fit_model(kind, held_out)
            est = kl_estimate(fitted, held_out)
            kl_rows.append([kind, n_train, est.value, est.n_infinite, est.n_points])
    (out / "power.csv").write_text(report.to_csv())
    (out / "local_pvalues.csv").write_text(format_csv(
        local_rows, ["model", "n_train", "statistic", "theta_1", "theta_2", "p"]))
    (out / "kl.csv").write_text(format_csv(kl_rows, ["model", "n_train", "kl", "n_infinite", "n_points"]))
    _dump_json(out / "global.json", global_out)
    return ["power.csv", "local_pvalues.csv", "kl.csv", "global.json"]
