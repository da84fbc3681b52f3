"""Command-line driver.

Usage: ``smoothdiv <command> --config FILE [flags]`` with commands estimate,
limit, bounds, check, convergence and concentration.  Flags override values
from the config file.  Exit status is 0 on success, 2 on configuration errors
and 3 on numerical failures or aborted experiments.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds as bd
from .config import load_config
from .divergence import DivergenceEstimator
from .errors import ConfigError, NumericalError
from .experiments import (
    DEFAULT_LIMIT_POINTS,
    ExperimentConfig,
    limit_seed,
    rep_seed,
    rule_seed,
    run_concentration,
    run_convergence,
)
from .integration import DEFAULT_DRAWS, DEFAULT_EPS, MAX_GRID_DIM, default_rule, make_grid
from .limit_law import build_gp, limit_means, limit_samples, save_limit_sample
from .measures import Gaussian, sample, subgaussian_parameter

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "SMOOTHDIV_SEED"
DEFAULT_SEED = 0
DEFAULT_T_GRID = (0.02, 0.05, 0.1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", "--config", dest="config", metavar="PATH", required=True,
                        help="YAML file with a 'measure' entry and optional settings")
    common.add_argument("--sigma", type=float, help="smoothing parameter")
    common.add_argument("--n", type=int, help="sample size")
    common.add_argument("--reps", type=int, help="repetitions per sample size")
    common.add_argument("--n-grid", type=_int_list, help="comma-separated sample sizes")
    common.add_argument("--draws", type=int,
                        help="limit draws for 'limit'; importance-sampling draws otherwise")
    common.add_argument("--limit-draws", type=int, help="limit-law sample size for 'convergence'")
    common.add_argument("--grid", type=int, help="grid points per axis")
    common.add_argument("--eps", type=float, help="smoothed tail mass outside the truncation box")
    common.add_argument("--measure", choices=("tv", "chi2", "both"), default="both")
    common.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or {DEFAULT_SEED})")
    common.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
    common.add_argument("--out", metavar="DIR", help="directory for persisted outputs")
    common.add_argument("--t-grid", type=_float_list, help="comma-separated deviations for 'concentration'")
    common.add_argument("--radius", type=float, help="probe radius for 'check'")
    common.add_argument("--beta", type=float, help="sub-Gaussian parameter for 'check' and 'bounds'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smoothdiv", description="Smoothed TV and chi^2 divergences.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("estimate", "divergences between one sample and its reference"),
                       ("limit", "draws from the limit laws"),
                       ("bounds", "moment bounds and integrals"),
                       ("check", "sufficient-condition reports"),
                       ("convergence", "convergence experiment"),
                       ("concentration", "concentration experiment")]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge config values with flags (flags win) and fill defaults."""
    settings = load_config(args.config)
    for key in ("sigma", "n", "reps", "n_grid", "draws", "limit_draws", "grid", "eps", "workers",
                "t_grid", "radius", "beta"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.seed is not None:
        settings["seed"] = args.seed
    elif "seed" not in settings:
        env = os.environ.get(SEED_ENV)
        try:
            settings["seed"] = int(env) if env else DEFAULT_SEED
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an unsigned integer, got {env!r}") from None
    if settings["seed"] < 0:
        raise ConfigError("seed must be unsigned")
    if "sigma" not in settings:
        raise ConfigError("sigma must be given in the config or with --sigma")
    settings.setdefault("eps", DEFAULT_EPS)
    settings.setdefault("draws", None)
    settings.setdefault("grid", None)
    return settings


def _rule(s: dict):
    return default_rule(s["spec"], s["sigma"], s["eps"], s["grid"], s["draws"] or DEFAULT_DRAWS,
                        seed=rule_seed(s["seed"]))


def _emit(payload: dict, out: str | None, filename: str) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if out is not None:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / filename).write_text(text)


def cmd_estimate(args, s) -> int:
    spec, sigma = s["spec"], s["sigma"]
    n = int(s.get("n", 100))
    tv, chi = DivergenceEstimator(spec, sigma, _rule(s), s["eps"]).estimate(sample(spec, n, rep_seed(s["seed"], n, 0)))
    results = {}
    for res in (tv, chi):
        if args.measure in (res.measure, "both"):
            print(f"{res.measure} {res.value:.10g} ± {res.integration_error:.3g}")
            results[res.measure] = {"value": res.value, "error": res.integration_error}
    if args.out is not None:
        payload = {"spec": spec.to_dict(), "sigma": sigma, "n": n, "seed": s["seed"], "results": results}
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "estimate.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_limit(args, s) -> int:
    spec, sigma = s["spec"], s["sigma"]
    if spec.dim > MAX_GRID_DIM:
        raise ConfigError(f"limit simulation supports d <= {MAX_GRID_DIM}")
    draws = int(s["draws"] or 1000)
    points = s["grid"] or int(s.get("limit_points", DEFAULT_LIMIT_POINTS[spec.dim]))
    model = build_gp(spec, sigma, make_grid(spec, sigma, s["eps"], points), s.get("jitter"))
    tv, chi = limit_samples(model, draws, limit_seed(s["seed"]))
    mean_tv, mean_chi = limit_means(model)
    meta = {"spec": spec.to_dict(), "sigma": sigma, "seed": s["seed"], "draws": draws, "model": model.describe()}
    summary = {}
    for name, values, exact in (("tv", tv, mean_tv), ("chi2", chi, mean_chi)):
        if args.measure not in (name, "both"):
            continue
        summary[name] = {"mean": float(values.mean()), "sd": float(values.std(ddof=1)), "exact_mean": exact,
                         "quantiles": [float(q) for q in np.quantile(values, [0.05, 0.5, 0.95])]}
        if args.out is not None:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            save_limit_sample(Path(args.out) / f"limit_{name}.txt", values, dict(meta, functional=name))
    _emit(summary, None, "")
    return EXIT_OK


def cmd_bounds(args, s) -> int:
    spec, sigma = s["spec"], s["sigma"]
    rule = _rule(s)
    integral = bd.tv_variance_integral(spec, sigma, rule, s["eps"])
    j = bd.chi2_mean_integral(spec, sigma, rule, s["eps"])
    lemma1 = bd.lemma1_bound(spec, sigma)
    beta = s.get("beta", subgaussian_parameter(spec))
    payload = {
        "tv_variance_integral": integral.value, "tv_variance_integral_error": integral.error,
        "tv_upper": 0.5 * integral.value, "tv_lower": integral.value / math.sqrt(2.0 * math.pi),
        "lemma1": lemma1, "chi2_mean_integral": j.value, "chi2_mean_integral_error": j.error,
        "beta": beta, "lemma2": None, "lemma2_eta": None,
    }
    try:
        payload["lemma2"], payload["lemma2_eta"] = bd.lemma2_best_bound(spec, sigma, beta)
    except ConfigError:
        pass
    payload["tv_lower_le_upper"] = payload["tv_lower"] <= payload["tv_upper"]
    payload["lemma1_ge_integral"] = lemma1 >= integral.value
    _emit(payload, args.out, "bounds.json")
    return EXIT_OK


def cmd_check(args, s) -> int:
    spec, sigma = s["spec"], s["sigma"]
    reports = [bd.lemma2_check(s.get("beta", subgaussian_parameter(spec)), sigma)]
    if isinstance(spec, Gaussian):
        reports.append(bd.lemma3_check(spec.covariance, sigma))
    if spec.dim <= MAX_GRID_DIM:
        reports.append(bd.condition_probe(spec, sigma, "tv", s.get("radius"), s["grid"]))
        reports.append(bd.condition_probe(spec, sigma, "chi2", s.get("radius"), s["grid"]))
    text = "".join(r.to_record() + "\n" for r in reports)
    sys.stdout.write(text)
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "check.jsonl").write_text(text)
    return EXIT_OK


def _experiment(s, default_grid, out) -> ExperimentConfig:
    n_grid = s.get("n_grid") or ([s["n"]] if "n" in s else default_grid)
    return ExperimentConfig(
        spec=s["spec"], sigma=s["sigma"], n_grid=tuple(int(n) for n in n_grid), reps=int(s.get("reps", 100)),
        limit_draws=int(s.get("limit_draws", 5000)), master_seed=s["seed"], eps=s["eps"],
        points_per_axis=s["grid"], draws=int(s["draws"] or DEFAULT_DRAWS),
        limit_points=s.get("limit_points"), jitter=s.get("jitter"), out=out)


def cmd_convergence(args, s) -> int:
    report = run_convergence(_experiment(s, [50, 500, 5000], args.out), s.get("workers"))
    _emit(report.summary(), None, "")
    return EXIT_OK


def cmd_concentration(args, s) -> int:
    config = _experiment(s, [200], args.out)
    rows = run_concentration(config, s.get("t_grid") or DEFAULT_T_GRID, s.get("workers"))
    _emit({"config": config.to_dict(), "rows": rows}, None, "")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "limit": cmd_limit, "bounds": cmd_bounds, "check": cmd_check,
            "convergence": cmd_convergence, "concentration": cmd_concentration}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args)
        return COMMANDS[args.command](args, settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
