"""Monte Carlo harness for the limit laws, rates and concentration of the
smoothed divergences, with deterministic persistence."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from .bounds import chi2_mean_integral, concentration_bound, tv_variance_integral
from .divergence import DivergenceEstimator
from .errors import ConfigError, NumericalError
from .integration import DEFAULT_DRAWS, DEFAULT_EPS, MAX_GRID_DIM, default_rule, make_grid
from .limit_law import build_gp, limit_means, limit_samples, save_limit_sample
from .measures import MeasureSpec, check_sigma, sample, spec_from_dict

logger = logging.getLogger(__name__)

STREAM_REPS = 1
STREAM_LIMIT = 2
STREAM_RULE = 3
ABORT_FRACTION = 0.05
# Integration errors below this are roundoff and never trigger an abort.
ABORT_FLOOR = 1e-12
DEFAULT_LIMIT_POINTS = {1: 400, 2: 30, 3: 12}


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def ks_statistic(a: ArrayLike, b: ArrayLike) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ConfigError("ks_statistic needs two nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def wasserstein1_1d(a: ArrayLike, b: ArrayLike) -> float:
    """W1 distance between two empirical laws on the line.

    Equal lengths use the sorted coupling directly; otherwise the quantile
    functions are compared through :func:`scipy.stats.wasserstein_distance`.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ConfigError("wasserstein1_1d needs two nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


def fit_loglog_slope(ns: ArrayLike, means: ArrayLike) -> tuple[float, float]:
    """Least-squares slope of log(mean) on log(n) and its standard error."""
    ns = np.asarray(ns, dtype=float)
    means = np.asarray(means, dtype=float)
    if ns.size < 3 or ns.shape != means.shape:
        raise ConfigError("slope fit needs at least 3 paired points")
    if np.any(ns <= 0) or np.any(means <= 0):
        raise ConfigError("slope fit needs positive n and means")
    x = np.log(ns)
    y = np.log(means)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ConfigError("slope fit needs at least two distinct n")
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = ns.size - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, stderr


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``points_per_axis``/``draws``/``eps`` configure the divergence rule,
    ``limit_points`` the grid the limit process lives on.
    """

    spec: MeasureSpec
    sigma: float
    n_grid: tuple
    reps: int
    limit_draws: int = 5000
    master_seed: int = 0
    eps: float = DEFAULT_EPS
    points_per_axis: int | None = None
    draws: int = DEFAULT_DRAWS
    limit_points: int | None = None
    jitter: float | None = None
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_sigma(self.sigma))
        ns = tuple(int(n) for n in self.n_grid)
        if not ns or ns[0] < 1 or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError(f"n_grid must be strictly increasing positive integers, got {list(self.n_grid)}")
        object.__setattr__(self, "n_grid", ns)
        if int(self.reps) < 2:
            raise ConfigError("reps must be >= 2")
        if int(self.limit_draws) < 100:
            raise ConfigError("limit_draws must be >= 100")
        if int(self.master_seed) < 0:
            raise ConfigError("master_seed must be unsigned")
        for name in ("reps", "limit_draws", "master_seed", "draws"):
            object.__setattr__(self, name, int(getattr(self, name)))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "sigma": self.sigma, "n_grid": list(self.n_grid),
                "reps": self.reps, "limit_draws": self.limit_draws, "master_seed": self.master_seed,
                "eps": self.eps, "points_per_axis": self.points_per_axis, "draws": self.draws,
                "limit_points": self.limit_points, "jitter": self.jitter}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "spec" not in doc:
            raise ConfigError("experiment config needs a 'spec' entry")
        spec = doc.pop("spec")
        spec = spec if isinstance(spec, MeasureSpec) else spec_from_dict(spec)
        known = set(cls.__dataclass_fields__) - {"spec"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(spec=spec, **doc)

    def rule(self, seed_offset: int = 0):
        """Integration rule for the divergences; importance draws use their own seed stream."""
        return default_rule(self.spec, self.sigma, self.eps, self.points_per_axis, self.draws,
                            seed=rule_seed(self.master_seed, seed_offset))


def _derive_seed(master: int, key: tuple) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def rep_seed(master: int, n: int, rep: int) -> int:
    """Seed of repetition ``rep`` at sample size ``n``."""
    return _derive_seed(master, (STREAM_REPS, n, rep))


def rule_seed(master: int, offset: int = 0) -> int:
    """Seed of importance-sampling nodes."""
    return _derive_seed(master, (STREAM_RULE, offset))


def limit_seed(master: int) -> int:
    """Seed of the limit-law draws, from a stream disjoint from the reps."""
    return _derive_seed(master, (STREAM_LIMIT,))


# ---------------------------------------------------------------------------
# Rep execution
# ---------------------------------------------------------------------------

_WORKER_ESTIMATOR: DivergenceEstimator | None = None


def _init_worker(spec, sigma, rule, eps):
    global _WORKER_ESTIMATOR
    _WORKER_ESTIMATOR = DivergenceEstimator(spec, sigma, rule, eps)


def _one_rep(task) -> tuple[float, float, float, float]:
    n, seed = task
    tv, chi = _WORKER_ESTIMATOR.estimate(sample(_WORKER_ESTIMATOR.spec, n, seed))
    return tv.value, chi.value, tv.integration_error, chi.integration_error


def _run_reps(config: ExperimentConfig, tasks: list, workers: int) -> NDArray[np.float64]:
    """Raw (tv, chi2, err_tv, err_chi2) per task, in task order."""
    rule = config.rule()
    if workers <= 1 or len(tasks) < 2:
        _init_worker(config.spec, config.sigma, rule, config.eps)
        rows = [_one_rep(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(config.spec, config.sigma, rule, config.eps)) as pool:
            rows = list(pool.map(_one_rep, tasks, chunksize=chunk))
    return np.array(rows, dtype=float).reshape(len(tasks), 4)


def _default_workers(workers: int | None) -> int:
    if workers is None:
        return os.cpu_count() or 1
    if int(workers) < 1:
        raise ConfigError("workers must be >= 1")
    return int(workers)


# ---------------------------------------------------------------------------
# Convergence experiment
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConvergenceReport:
    """Scaled statistics sqrt(n) tv and n chi2 per n, with summaries.

    ``stat_*``/``err_*`` map n to length-``reps`` vectors.  KS and W1 entries
    are None when no limit sample was drawn (d > 3).
    """

    config: ExperimentConfig
    stat_tv: dict
    stat_chi2: dict
    err_tv: dict
    err_chi2: dict
    limit_tv: NDArray | None = None
    limit_chi2: NDArray | None = None
    bounds: dict = field(default_factory=dict)
    limit_model: dict = field(default_factory=dict)

    @property
    def ns(self) -> tuple:
        return self.config.n_grid

    def mean(self, which: str) -> NDArray[np.float64]:
        return np.array([np.mean(self._stats(which)[n]) for n in self.ns])

    def sem(self, which: str) -> NDArray[np.float64]:
        return np.array([np.std(self._stats(which)[n], ddof=1) / math.sqrt(self.config.reps) for n in self.ns])

    def _stats(self, which):
        if which not in ("tv", "chi2"):
            raise ConfigError(f"unknown statistic {which!r}")
        return self.stat_tv if which == "tv" else self.stat_chi2

    def _limit(self, which):
        return self.limit_tv if which == "tv" else self.limit_chi2

    def ks(self, which: str) -> list:
        lim = self._limit(which)
        return [None if lim is None else ks_statistic(self._stats(which)[n], lim) for n in self.ns]

    def w1(self, which: str) -> list:
        lim = self._limit(which)
        return [None if lim is None else wasserstein1_1d(self._stats(which)[n], lim) for n in self.ns]

    def slope(self, which: str):
        """Slope of log E[divergence] on log n, its stderr and a 95% band; None if undefined."""
        power = 0.5 if which == "tv" else 1.0
        raw = self.mean(which) / np.asarray(self.ns, dtype=float) ** power
        if len(self.ns) < 3 or np.any(raw <= 0):
            return None
        s, se = fit_loglog_slope(self.ns, raw)
        q = float(stats.t.ppf(0.975, len(self.ns) - 2))
        return {"slope": s, "stderr": se, "band": [s - q * se, s + q * se]}

    def summary(self) -> dict:
        per_n = []
        ks_tv, ks_chi = self.ks("tv"), self.ks("chi2")
        w_tv, w_chi = self.w1("tv"), self.w1("chi2")
        m_tv, m_chi = self.mean("tv"), self.mean("chi2")
        s_tv, s_chi = self.sem("tv"), self.sem("chi2")
        for i, n in enumerate(self.ns):
            per_n.append({"n": n, "mean_tv": m_tv[i], "sem_tv": s_tv[i], "mean_chi2": m_chi[i],
                          "sem_chi2": s_chi[i], "ks_tv": ks_tv[i], "ks_chi2": ks_chi[i],
                          "w1_tv": w_tv[i], "w1_chi2": w_chi[i],
                          "max_err_tv": float(np.max(self.err_tv[n])),
                          "max_err_chi2": float(np.max(self.err_chi2[n]))})
        return _jsonable({"config": self.config.to_dict(), "per_n": per_n,
                          "slope_tv": self.slope("tv"), "slope_chi2": self.slope("chi2"),
                          "bounds": self.bounds, "limit_model": self.limit_model})

    def table_rows(self):
        for n in self.ns:
            for r in range(self.config.reps):
                yield (n, r, self.stat_tv[n][r], self.stat_chi2[n][r], self.err_tv[n][r], self.err_chi2[n][r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _check_abort(stat: NDArray, err: NDArray, n: int, which: str):
    sd = float(np.std(stat, ddof=1))
    worst = float(np.max(err))
    if worst > max(ABORT_FRACTION * sd, ABORT_FLOOR):
        raise NumericalError(f"integration error {worst:.3g} of {which} at n={n} exceeds "
                             f"{ABORT_FRACTION:.0%} of the cross-rep sd {sd:.3g}")


def limit_law_sample(config: ExperimentConfig):
    """Paired (tv, chi2) limit draws and the model description, or Nones for d > 3."""
    if config.spec.dim > MAX_GRID_DIM:
        return None, None, {}
    points = config.limit_points or DEFAULT_LIMIT_POINTS[config.spec.dim]
    grid = make_grid(config.spec, config.sigma, config.eps, points)
    model = build_gp(config.spec, config.sigma, grid, config.jitter)
    tv, chi = limit_samples(model, config.limit_draws, limit_seed(config.master_seed))
    mean_tv, mean_chi = limit_means(model)
    meta = dict(model.describe(), mean_tv=mean_tv, mean_chi2=mean_chi)
    return tv, chi, meta


def run_convergence(config: ExperimentConfig, workers: int | None = None) -> ConvergenceReport:
    """Run every (n, rep) pair, draw the limit sample and persist if ``config.out`` is set.

    Raises
    ------
    NumericalError
        If some rep's integration error exceeds 5% of the cross-rep standard
        deviation of its statistic.
    """
    workers = _default_workers(workers)
    tasks = [(n, rep_seed(config.master_seed, n, r)) for n in config.n_grid for r in range(config.reps)]
    raw = _run_reps(config, tasks, workers)
    stat_tv, stat_chi, err_tv, err_chi = {}, {}, {}, {}
    for i, n in enumerate(config.n_grid):
        block = raw[i * config.reps:(i + 1) * config.reps]
        stat_tv[n] = math.sqrt(n) * block[:, 0]
        stat_chi[n] = n * block[:, 1]
        err_tv[n] = math.sqrt(n) * block[:, 2]
        err_chi[n] = n * block[:, 3]
        _check_abort(stat_tv[n], err_tv[n], n, "tv")
        _check_abort(stat_chi[n], err_chi[n], n, "chi2")
    lim_tv, lim_chi, model_meta = limit_law_sample(config)
    rule = config.rule()
    integral = tv_variance_integral(config.spec, config.sigma, rule, config.eps)
    j = chi2_mean_integral(config.spec, config.sigma, rule, config.eps)
    bounds = {"tv_variance_integral": integral.value, "tv_variance_integral_error": integral.error,
              "tv_upper": 0.5 * integral.value, "tv_lower": integral.value / math.sqrt(2.0 * math.pi),
              "chi2_mean_integral": j.value, "chi2_mean_integral_error": j.error}
    report = ConvergenceReport(config, stat_tv, stat_chi, err_tv, err_chi, lim_tv, lim_chi, bounds, model_meta)
    if config.out is not None:
        persist_convergence(report, config.out)
    return report


def _header(config: ExperimentConfig) -> str:
    return "# config: " + json.dumps(_jsonable(config.to_dict()), sort_keys=True)


def _write_table(path: Path, header: str, columns: list, rows) -> None:
    buf = io.StringIO()
    buf.write(header + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def persist_convergence(report: ConvergenceReport, out) -> dict:
    """Write convergence.csv, convergence_summary.json and the limit samples.

    Returns a mapping of artifact names to paths.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(report.config)
    paths = {"table": out / "convergence.csv", "summary": out / "convergence_summary.json"}
    _write_table(paths["table"], header, ["n", "rep", "stat_tv", "stat_chi2", "err_tv", "err_chi2"],
                 report.table_rows())
    summary = report.summary()
    paths["summary"].write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if report.limit_tv is not None:
        meta = {"config": _jsonable(report.config.to_dict()), "model": _jsonable(report.limit_model)}
        paths["limit_tv"] = save_limit_sample(out / "limit_tv.txt", report.limit_tv, dict(meta, functional="tv"))
        paths["limit_chi2"] = save_limit_sample(out / "limit_chi2.txt", report.limit_chi2,
                                                dict(meta, functional="chi2"))
    return paths


# ---------------------------------------------------------------------------
# Concentration experiment
# ---------------------------------------------------------------------------


def run_concentration(config: ExperimentConfig, t_grid, workers: int | None = None) -> list[dict]:
    """Exceedance frequencies of tv >= mean(tv) + t beside exp(-n t^2 / 2).

    One row per (n, t).  ``ok`` records whether the frequency is within the
    bound plus two binomial standard errors.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid or any(t <= 0 for t in t_grid):
        raise ConfigError("t_grid must be a nonempty list of positive values")
    if config.reps < 1000:
        logger.warning("reps=%d < 1000; exceedance frequencies will be coarse", config.reps)
    workers = _default_workers(workers)
    tasks = [(n, rep_seed(config.master_seed, n, r)) for n in config.n_grid for r in range(config.reps)]
    raw = _run_reps(config, tasks, workers)
    rows = []
    for i, n in enumerate(config.n_grid):
        tv = raw[i * config.reps:(i + 1) * config.reps, 0]
        center = float(np.mean(tv))
        for t in t_grid:
            freq = float(np.mean(tv >= center + t))
            bound = concentration_bound(n, t)
            se = math.sqrt(bound * (1.0 - bound) / config.reps)
            rows.append({"n": n, "t": t, "mean_tv": center, "frequency": freq, "bound": bound,
                         "binomial_se": se, "ok": bool(freq <= bound + 2.0 * se)})
    if config.out is not None:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["n", "t", "mean_tv", "frequency", "bound", "binomial_se", "ok"]
        _write_table(out / "concentration.csv", _header(config), cols, ([r[c] for c in cols] for r in rows))
    return rows
