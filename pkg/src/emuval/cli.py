"""Command-line front end.

Results go to stdout as JSON and diagnostics to stderr.  Exit status is 0 on
success, 2 for invalid input (bad flags, unreadable or malformed files,
inconsistent dimensions) and 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import math
import secrets
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DimensionMismatchError, MalformedCSVError, RngStream, Sample, pool_and_label, read_sample_csv
from .diagnose import diagnosis_csv, feature_space_test, train_test_split
from .globaltest import GlobalTestConfig, GridReference, LocalTestError, global_test
from .harness import (
    EXPERIMENTS,
    ConfigError,
    PerTrial,
    config_seed,
    estimate_power,
    example2_thetas,
    load_config_file,
    make_regressor,
    poisson_synth_grid,
    run_experiment,
)
from .localtest import LocalTestConfig, SamplingError, check_resolution, local_test, mc_gof_test, permutation_test
from .models import SETTINGS, SyntheticSetting, fit_model, kl_estimate, load_ensembles, make_ensembles, save_ensembles
from .regress import ForestParams, RegressionMethod
from .stats import C2STStatistic, EnergyStatistic, MMDStatistic, RegressionStatistic

INPUT_ERRORS = (FileNotFoundError, IsADirectoryError, MalformedCSVError, DimensionMismatchError, ConfigError,
                ValueError, KeyError)


class InputError(Exception):
    """Invalid user input detected after argument parsing."""


# ---------------------------------------------------------------- helpers


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _regressor(args) -> RegressionMethod:
    if args.regressor == "constant":
        return RegressionMethod.constant()
    if args.regressor == "knn":
        return RegressionMethod.knn(args.k)
    return RegressionMethod.random_forest(ForestParams(n_trees=args.n_trees, mtry=args.mtry, min_leaf=args.min_leaf))


def _statistic(args):
    if args.stat == "regression":
        return RegressionStatistic(_regressor(args))
    if args.stat == "mmd":
        return MMDStatistic()
    if args.stat == "energy":
        return EnergyStatistic()
    return C2STStatistic(_regressor(args))


def _theta(args, setting: SyntheticSetting):
    if args.theta is None:
        raise InputError("--theta is required with --setting")
    values = [float(v) for v in args.theta]
    setting.check_theta(values)
    return values[0] if len(values) == 1 else np.array(values)


def _setting(args) -> SyntheticSetting:
    return SyntheticSetting(args.setting, args.dim)


def _emulator_for(args, setting: SyntheticSetting):
    return setting.true_model() if args.emulator == "true" else setting.approximate_model()


def _write_text(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


# ---------------------------------------------------------------- subcommands


def cmd_local(args, rng: RngStream) -> dict:
    cfg = LocalTestConfig(_statistic(args), args.perms, args.n0 or args.n, args.n1 or args.n, args.mode)
    check_resolution(args.alpha, args.perms)
    if args.s0 or args.s1:
        if not (args.s0 and args.s1):
            raise InputError("--s0 and --s1 must be given together")
        s0, s1 = read_sample_csv(args.s0), read_sample_csv(args.s1)
        res = permutation_test(s0, s1, cfg, rng, threads=args.threads)
        source = {"s0": args.s0, "s1": args.s1}
    elif args.setting:
        setting = _setting(args)
        theta = _theta(args, setting)
        res = local_test(theta, setting.true_model(), _emulator_for(args, setting), cfg, rng, threads=args.threads)
        source = {"setting": setting.to_dict(), "theta": np.atleast_1d(theta).tolist(), "emulator": args.emulator}
    else:
        raise InputError("give --s0/--s1 sample files or --setting with --theta")
    return {"result": res.to_dict(), "config": cfg.to_dict(), "source": source}


class _EnsembleSimulator:
    """Held-out ensemble draws looked up by parameter value."""

    def __init__(self, ensembles):
        self.by_theta = {e.theta: e.test.points for e in ensembles}

    def sample(self, n: int, theta, rng: RngStream) -> np.ndarray:
        key = tuple(float(v) for v in np.atleast_1d(theta))
        pts = self.by_theta[key]
        if n >= pts.shape[0]:
            return pts
        return pts[np.sort(rng.generator().choice(pts.shape[0], size=n, replace=False))]


def _grid_for(args, setting: SyntheticSetting) -> np.ndarray:
    if setting.tag == "poisson_synth":
        return poisson_synth_grid(args.grid_points)
    if setting.tag == "example1":
        raise InputError("example1 uses a Gamma(1, 1) reference; run `experiment example1`")
    return np.array(example2_thetas(setting.tag, args.grid_points))[:, None]


def _models_for(args, setting: SyntheticSetting, grid: np.ndarray):
    """Simulator and emulator pair for the global and power commands."""
    if args.manifest:
        ensembles = load_ensembles(args.manifest)
        kind = args.model or "kde"
        if kind in ("true", "approx"):
            raise InputError("with --manifest, --model must be gaussian, poisson or kde")
        return _EnsembleSimulator(ensembles), fit_model(kind, ensembles), np.array([e.theta for e in ensembles])
    truth = setting.true_model()
    kind = args.model or "approx"
    if kind == "true":
        return truth, truth, grid
    if kind == "approx":
        return truth, setting.approximate_model(), grid
    return truth, PerTrial(lambda stream: fit_model(kind, make_ensembles(setting, grid, args.n_train, 1, stream))), grid


def cmd_global(args, rng: RngStream) -> dict:
    if not args.manifest and not args.setting:
        raise InputError("give --setting or --manifest")
    setting = _setting(args) if args.setting else None
    grid = _grid_for(args, setting) if setting else None
    simulator, emulator, grid = _models_for(args, setting, grid)
    if isinstance(emulator, PerTrial):
        emulator = emulator.build(rng.substream(1))
    local = LocalTestConfig(_statistic(args), args.perms, args.n_sim, args.n_sim, args.mode)
    cfg = GlobalTestConfig(GridReference(grid), args.b, local, args.uniformity, args.n_null)
    try:
        res = global_test(cfg, simulator, emulator, rng.substream(0), threads=args.threads)
    except LocalTestError as exc:
        raise InputError(str(exc)) from exc
    _write_text(args.csv, res.to_csv())
    return {"result": res.to_dict(), "config": cfg.to_dict()}


def cmd_mc_gof(args, rng: RngStream) -> dict:
    setting = _setting(args)
    theta = _theta(args, setting)
    emulator = _emulator_for(args, setting)
    if args.s:
        s = read_sample_csv(args.s)
        if s.dim != setting.dim:
            raise DimensionMismatchError(f"sample has dim {s.dim}, setting has dim {setting.dim}")
    else:
        s = Sample(setting.true_model().sample(args.n_obs, theta, rng.substream(0)))
    check_resolution(args.alpha, args.perms)
    res = mc_gof_test(s, lambda n, stream: emulator.sample(n, theta, stream), args.n_e, args.perms,
                      _regressor(args), rng.substream(1), threads=args.threads)
    return {
        "result": res.to_dict(),
        "config": {"n_obs": s.n, "n_e": args.n_e, "m": args.perms, "regressor": _regressor(args).to_dict(),
                   "setting": setting.to_dict(), "theta": np.atleast_1d(theta).tolist(), "emulator": args.emulator},
    }


def cmd_diagnose(args, rng: RngStream) -> dict:
    if args.s0 and args.s1:
        s0, s1 = read_sample_csv(args.s0), read_sample_csv(args.s1)
    elif args.setting:
        setting = _setting(args)
        theta = _theta(args, setting)
        s0 = setting.true_model().sample(args.n, theta, rng.substream(2))
        s1 = _emulator_for(args, setting).sample(args.n, theta, rng.substream(3))
    else:
        raise InputError("give --s0/--s1 sample files or --setting with --theta")
    data = pool_and_label(s0, s1)
    train, test_points = train_test_split(data, args.train_fraction, rng.substream(0))
    diags = feature_space_test(train, test_points, _regressor(args), args.perms, args.alpha, rng.substream(1),
                               threads=args.threads)
    csv_text = diagnosis_csv(diags)
    _write_text(args.csv, csv_text)
    return {
        "n_train": train.n,
        "n_test": len(diags),
        "n_flagged": sum(d.flagged for d in diags),
        "alpha": args.alpha,
        "points": [
            {"x": d.point, "deviation": d.deviation, "direction": d.direction, "p_value": d.p_value,
             "flagged": d.flagged}
            for d in diags
        ],
    }


def _ensembles_for(args, rng: RngStream):
    if args.manifest:
        return load_ensembles(args.manifest)
    if not args.setting:
        raise InputError("give --manifest or --setting")
    setting = _setting(args)
    grid = _grid_for(args, setting)
    return make_ensembles(setting, grid, args.n_train, args.n_test, rng)


def _describe(model) -> list[dict]:
    out = []
    for key in model.thetas():
        entry = {"theta": list(key)}
        state = model.params[key]
        if model.kind == "gaussian":
            entry["mean"] = state
        elif model.kind == "poisson":
            entry["rates"] = state
        else:
            entry["n_centres"] = state[0].shape[0]
            entry["bandwidth"] = state[1]
        out.append(entry)
    return out


def cmd_fit(args, rng: RngStream) -> dict:
    ensembles = _ensembles_for(args, rng.substream(0))
    manifest = save_ensembles(args.save_ensembles, ensembles) if args.save_ensembles else None
    model = fit_model(args.model, ensembles)
    out = {"model": model.kind, "dim": model.dim, "per_theta": _describe(model)}
    if manifest is not None:
        out["manifest"] = str(manifest)
    if model.kind == "gaussian":
        out["covariance"] = model.covariance
    return out


def cmd_kl(args, rng: RngStream) -> dict:
    ensembles = _ensembles_for(args, rng.substream(0))
    rows = []
    for kind in args.models:
        est = kl_estimate(fit_model(kind, ensembles), ensembles)
        rows.append({"model": kind, **est.to_dict()})
    return {"estimates": rows}


def cmd_power(args, rng: RngStream) -> dict:
    setting = _setting(args)
    if args.theta is not None:
        setting.check_theta(args.theta)
        thetas = [float(v) for v in args.theta] if setting.theta_dim == 1 else [np.array(args.theta, dtype=float)]
    else:
        thetas = [row[0] if row.size == 1 else row for row in _grid_for(args, setting)]
    cfg = LocalTestConfig(_statistic(args), args.perms, args.n, args.n, args.mode)
    truth = setting.true_model()
    emulator = truth if args.emulator == "true" else setting.approximate_model()
    row = estimate_power(cfg, truth, emulator, args.trials, args.alpha, rng, thetas=thetas,
                         threads=args.threads, setting=setting.tag, dim=setting.dim, n=args.n)
    _write_text(args.csv, _power_csv(row))
    return {
        "setting": setting.tag, "dim": setting.dim, "n": args.n, "statistic": cfg.statistic.to_dict(),
        "trials": row.trials, "rejections": row.rejections, "power": row.power, "se": row.se,
        "alpha": args.alpha, "thetas": [np.atleast_1d(t).tolist() for t in thetas],
    }


def _power_csv(row) -> str:
    from .harness import PowerReport

    return PowerReport([row]).to_csv()


def cmd_experiment(args, rng: RngStream) -> dict:
    overrides = {"full_scale": True} if args.full_scale else None
    if args.full_scale and args.name != "poisson_synth":
        raise InputError("--full-scale applies to poisson_synth only")
    out = run_experiment(args.name, args.config, args.out, rng.seed, threads=args.threads, overrides=overrides)
    files = sorted(p.name for p in out.iterdir() if p.is_file())
    return {"experiment": args.name, "out_dir": str(out), "files": files, "seed": rng.seed}


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=None, help="64-bit seed; drawn from OS entropy if omitted")
    p.add_argument("--threads", type=_positive, default=None,
                   help="worker threads (default: $EMUVAL_THREADS, else all cores)")
    p.add_argument("--config", default=None, help="TOML file with defaults for this command")


def _add_regressor(p: argparse.ArgumentParser, default: str = "rf") -> None:
    p.add_argument("--regressor", choices=("rf", "knn", "constant"), default=default)
    p.add_argument("--k", type=_positive, default=None, help="neighbours for knn (default round(sqrt(n)))")
    p.add_argument("--n-trees", type=_positive, default=100)
    p.add_argument("--mtry", type=_positive, default=None, help="features per split (default ceil(sqrt(D)))")
    p.add_argument("--min-leaf", type=_positive, default=5)


def _add_statistic(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stat", choices=("regression", "mmd", "energy", "c2st"), default="regression")
    p.add_argument("--perms", type=_positive, default=99, help="permutation or Monte-Carlo replicates M")
    p.add_argument("--mode", choices=("full", "split"), default="full")
    _add_regressor(p)


def _add_setting(p: argparse.ArgumentParser, theta: bool = True) -> None:
    p.add_argument("--setting", choices=SETTINGS, default=None)
    p.add_argument("--dim", type=_positive, default=1, help="feature dimension of the setting")
    if theta:
        p.add_argument("--theta", type=float, nargs="+", default=None)
    p.add_argument("--emulator", choices=("approx", "true"), default="approx",
                   help="compare against the setting's approximation or its true model")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _probability(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1), got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1), got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emuval", description="Validate emulators against simulators.",
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        _add_common(p)
        return p

    p = add("local", "two-sample test at one parameter value")
    p.add_argument("--s0", help="CSV of simulator draws")
    p.add_argument("--s1", help="CSV of emulator draws")
    _add_setting(p)
    p.add_argument("--n", type=_positive, default=100, help="draws per sample with --setting")
    p.add_argument("--n0", type=_positive, default=None, help="simulator draws (overrides --n)")
    p.add_argument("--n1", type=_positive, default=None, help="emulator draws (overrides --n)")
    p.add_argument("--alpha", type=_probability, default=0.05, help="level used for the resolution warning")
    _add_statistic(p)
    p.set_defaults(func=cmd_local)

    p = add("global", "global test across a parameter grid")
    _add_setting(p, theta=False)
    p.add_argument("--manifest", help="ensemble manifest; test splits act as the simulator")
    p.add_argument("--model", choices=("approx", "true", "gaussian", "poisson", "kde"), default=None,
                   help="emulator (default: approx for settings, kde for manifests)")
    p.add_argument("--n-train", type=_positive, default=100, help="training draws per theta for fitted models")
    p.add_argument("--grid-points", type=_positive, default=10, help="grid values per parameter axis")
    p.add_argument("--b", type=_positive, default=100, help="parameter draws")
    p.add_argument("--n-sim", type=_positive, default=100, help="draws per sample at each parameter")
    p.add_argument("--uniformity", choices=("ks", "cvm"), default="ks")
    p.add_argument("--n-null", type=_positive, default=999)
    p.add_argument("--csv", help="also write (theta, p) rows to this file")
    _add_statistic(p)
    p.set_defaults(func=cmd_global)

    p = add("mc-gof", "goodness of fit of a small sample via Monte-Carlo nulls")
    _add_setting(p)
    p.add_argument("--s", help="CSV of observed draws (default: simulate --n-obs from the true model)")
    p.add_argument("--n-obs", type=_positive, default=20)
    p.add_argument("--n-e", type=_positive, default=500, help="emulator draws per replicate")
    p.add_argument("--perms", type=_positive, default=99)
    p.add_argument("--alpha", type=_probability, default=0.05)
    _add_regressor(p, default="knn")
    p.set_defaults(func=cmd_mc_gof)

    p = add("diagnose", "flag feature-space regions where two samples differ")
    p.add_argument("--s0", help="CSV of simulator draws")
    p.add_argument("--s1", help="CSV of emulator draws")
    _add_setting(p)
    p.add_argument("--n", type=_positive, default=200)
    p.add_argument("--train-fraction", type=_probability, default=0.65)
    p.add_argument("--perms", type=_positive, default=99)
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--csv", help="write one row per test point to this file")
    _add_regressor(p)
    p.set_defaults(func=cmd_diagnose)

    for name, help_text in (("fit", "fit an emulator to training ensembles"),
                            ("kl", "held-out KL comparison of fitted emulators")):
        p = add(name, help_text)
        p.add_argument("--manifest", help="ensemble manifest JSON")
        _add_setting(p, theta=False)
        p.add_argument("--grid-points", type=_positive, default=10)
        p.add_argument("--n-train", type=_positive, default=100)
        p.add_argument("--n-test", type=_positive, default=200)
        if name == "fit":
            p.add_argument("--model", choices=("gaussian", "poisson", "kde"), default="gaussian")
            p.add_argument("--save-ensembles", help="directory to write the generated ensembles to")
            p.set_defaults(func=cmd_fit)
        else:
            p.add_argument("--models", nargs="+", choices=("gaussian", "poisson", "kde"),
                           default=["gaussian", "poisson", "kde"])
            p.set_defaults(func=cmd_kl)

    p = add("power", "rejection rate of a local test over repeated trials")
    _add_setting(p)
    p.add_argument("--n", type=_positive, default=100)
    p.add_argument("--trials", type=_positive, default=100)
    p.add_argument("--grid-points", type=_positive, default=20, help="grid values when --theta is omitted")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--csv", help="also write the power row to this file")
    _add_statistic(p)
    p.set_defaults(func=cmd_power)

    p = add("experiment", "reproduce one of the synthetic experiments")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--full-scale", action="store_true", help="poisson_synth: largest n_train 10000")
    p.set_defaults(func=cmd_experiment)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], args) -> argparse.Namespace:
    """Re-parse with values from the command's TOML table as defaults."""
    if args.command == "experiment" or not args.config:
        return args
    raw = load_config_file(args.config)
    table = raw.get(args.command, {k: v for k, v in raw.items() if not isinstance(v, dict)})
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest for a in sub._actions}  # noqa: SLF001
    values = {}
    for key, value in table.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "func", "help"):
            raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        values[dest] = value
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _warning_line(message, category, filename, lineno, line=None) -> str:
    return f"emuval: warning: {message}\n"


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command and return its exit status; argparse errors return 2."""
    previous = warnings.formatwarning
    warnings.formatwarning = _warning_line
    try:
        return _run(list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    finally:
        warnings.formatwarning = previous


def _run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(parser, argv, args)
        if args.command == "experiment" and args.seed is None and args.config:
            args.seed = config_seed(args.config)
        if args.seed is None:
            args.seed = secrets.randbits(63)
            print(f"emuval: using seed {args.seed}", file=sys.stderr)
        result = args.func(args, RngStream(args.seed))
    except (InputError, SamplingError, *INPUT_ERRORS) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"emuval: error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort handler for the exit code contract
        print(f"emuval: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if isinstance(result, dict):
        result.setdefault("seed", args.seed)
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
