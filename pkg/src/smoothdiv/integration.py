"""Integration over R^d: truncated midpoint grids and importance sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import optimize, stats

from .errors import ConfigError, NumericalError
from .measures import (
    Gaussian,
    GaussianMixture,
    MeasureSpec,
    PointCloud,
    UniformBox,
    check_sigma,
    sample,
)

Integrand = Callable[[NDArray[np.float64]], NDArray[np.float64]]

MAX_GRID_DIM = 3
DEFAULT_EPS = 1e-8
DEFAULT_POINTS = {1: 2000, 2: 200, 3: 60}
DEFAULT_DRAWS = 10**6
_CHUNK = 100_000


@dataclass(frozen=True)
class EstimateWithError:
    """A numerical result with a nonnegative error descriptor.

    ``error`` is a standard error for Monte Carlo rules and the change under
    grid halving for tensor grids.
    """

    value: float
    error: float
    method: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.error >= 0:
            raise NumericalError(f"error must be >= 0, got {self.error!r}")

    def scaled(self, c: float) -> "EstimateWithError":
        return EstimateWithError(c * self.value, abs(c) * self.error, self.method, dict(self.meta))


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Midpoint lattice with ``points_per_axis`` cells per axis on [lo, hi]."""

    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    points_per_axis: int

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo >= hi):
            raise ConfigError("grid box needs lo < hi componentwise")
        if int(self.points_per_axis) < 2:
            raise ConfigError("grid needs at least 2 points per axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def spacing(self) -> NDArray[np.float64]:
        return (self.hi - self.lo) / self.points_per_axis

    @property
    def weight(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def axis(self, k: int) -> NDArray[np.float64]:
        h = self.spacing[k]
        return self.lo[k] + h * (np.arange(self.points_per_axis) + 0.5)

    @property
    def nodes(self) -> NDArray[np.float64]:
        axes = [self.axis(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def halved(self) -> "TensorGrid":
        return TensorGrid(self.lo, self.hi, max(2, self.points_per_axis // 2))

    def describe(self) -> dict:
        return {"kind": "grid", "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "points_per_axis": self.points_per_axis}


@dataclass(frozen=True, eq=False)
class ImportanceRule:
    """Monte Carlo integration with ``draws`` points from ``proposal``."""

    proposal: MeasureSpec
    draws: int = DEFAULT_DRAWS
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.proposal, (Gaussian, GaussianMixture)):
            raise ConfigError("importance proposal must be a gaussian or gaussian mixture")
        comps = self.proposal.components if isinstance(self.proposal, GaussianMixture) else (self.proposal,)
        if any(c.eigenvalues[0] <= 0 for c in comps):
            raise ConfigError("importance proposal needs positive definite covariances")
        if int(self.draws) < 2:
            raise ConfigError("importance rule needs at least 2 draws")

    @property
    def dim(self) -> int:
        return self.proposal.dim

    def describe(self) -> dict:
        return {"kind": "importance", "proposal": self.proposal.to_dict(),
                "draws": int(self.draws), "seed": int(self.seed)}


def _smoothed_radius(spec: MeasureSpec, sigma: float, eps: float) -> float:
    d = spec.dim
    center = spec.mean
    if isinstance(spec, Gaussian):
        lam = spec.eigenvalues[-1] + sigma**2
        return math.sqrt(lam * stats.chi2.isf(eps, d))
    if isinstance(spec, GaussianMixture):
        shifts = [float(np.linalg.norm(c.loc - center)) for c in spec.components]
        lams = [c.eigenvalues[-1] + sigma**2 for c in spec.components]

        def excess(r):
            tail = sum(w * stats.chi2.sf(max(r - s, 0.0) ** 2 / lam, d)
                       for w, s, lam in zip(spec.weights, shifts, lams))
            return tail - eps

        hi = max(shifts) + math.sqrt(max(lams) * stats.chi2.isf(eps, d))
        return optimize.brentq(excess, 0.0, hi + 1e-9, xtol=1e-10)
    # Bounded support: |X - mean| <= R surely, noise takes the tail mass with
    # the budget split evenly.
    return spec.support_radius() + sigma * math.sqrt(stats.chi2.isf(0.5 * eps, d))


def choose_box(spec: MeasureSpec, sigma: float, eps: float = DEFAULT_EPS):
    """Cube around the mean whose complement has smoothed mass at most ``eps``.

    Returns
    -------
    lo, hi : ndarray
    """
    sigma = check_sigma(sigma)
    if not 0.0 < eps < 1.0:
        raise ConfigError(f"tail mass eps must lie in (0, 1), got {eps!r}")
    r = _smoothed_radius(spec, sigma, eps)
    center = spec.mean
    return center - r, center + r


def make_grid(spec: MeasureSpec, sigma: float, eps: float = DEFAULT_EPS,
              points_per_axis: int | None = None) -> TensorGrid:
    lo, hi = choose_box(spec, sigma, eps)
    if points_per_axis is None:
        if spec.dim > MAX_GRID_DIM:
            raise ConfigError(f"grid rules support d <= {MAX_GRID_DIM}")
        points_per_axis = DEFAULT_POINTS[spec.dim]
    return TensorGrid(lo, hi, points_per_axis)


def default_proposal(spec: MeasureSpec, sigma: float, inflation: float = 2.0) -> MeasureSpec:
    """The smoothed law P * N_sigma (moment-matched where not Gaussian), over-dispersed."""
    sigma = check_sigma(sigma)
    eye = np.eye(spec.dim)
    if isinstance(spec, Gaussian):
        return Gaussian(spec.loc, inflation * (spec.cov + sigma**2 * eye))
    if isinstance(spec, GaussianMixture):
        comps = tuple(Gaussian(c.loc, inflation * (c.cov + sigma**2 * eye)) for c in spec.components)
        return GaussianMixture(spec.weights, comps)
    if isinstance(spec, PointCloud):
        comps = tuple(Gaussian(p, inflation * sigma**2 * eye) for p in spec.points)
        return GaussianMixture(spec.weights, comps)
    if isinstance(spec, UniformBox):
        return Gaussian(spec.mean, inflation * (spec.covariance + sigma**2 * eye))
    raise ConfigError(f"no default proposal for {type(spec).__name__}")


def default_rule(spec: MeasureSpec, sigma: float, eps: float = DEFAULT_EPS,
                 points_per_axis: int | None = None, draws: int = DEFAULT_DRAWS, seed: int = 0):
    """Grid for d <= 2, importance sampling otherwise."""
    if spec.dim <= 2:
        return make_grid(spec, sigma, eps, points_per_axis)
    return ImportanceRule(default_proposal(spec, sigma), draws, seed)


def rule_box(rule, spec: MeasureSpec, sigma: float, eps: float = DEFAULT_EPS):
    """Truncation box a rule integrates over."""
    if isinstance(rule, TensorGrid):
        return rule.lo, rule.hi
    return choose_box(spec, sigma, eps)


def in_box(x: NDArray[np.float64], lo, hi) -> NDArray[np.bool_]:
    return np.all((x >= lo) & (x <= hi), axis=1)


def _grid_sum(f: Integrand, grid: TensorGrid) -> float:
    values = np.asarray(f(grid.nodes), dtype=float)
    if not np.all(np.isfinite(values)):
        raise NumericalError("integrand is not finite on the grid")
    return grid.weight * float(np.sum(values))


def integrate_grid(f: Integrand, grid: TensorGrid) -> EstimateWithError:
    """Midpoint rule; the error is the change from the half-resolution grid."""
    if grid.dim > MAX_GRID_DIM:
        raise ConfigError(f"grid integration supports d <= {MAX_GRID_DIM}, got {grid.dim}")
    fine = _grid_sum(f, grid)
    coarse = _grid_sum(f, grid.halved())
    return EstimateWithError(fine, abs(fine - coarse), "grid", grid.describe())


def integrate_importance(f: Integrand, rule: ImportanceRule) -> EstimateWithError:
    """Average of f/q over draws from the proposal q; the error is the standard error."""
    draws = sample(rule.proposal, rule.draws, rule.seed).points
    ratios = np.empty(draws.shape[0])
    for start in range(0, draws.shape[0], _CHUNK):
        x = draws[start:start + _CHUNK]
        with np.errstate(over="ignore", invalid="ignore"):
            ratios[start:start + _CHUNK] = np.asarray(f(x), dtype=float) / np.exp(rule.proposal.log_density(x))
    if not np.all(np.isfinite(ratios)):
        raise NumericalError("importance ratios are not finite")
    value = float(np.mean(ratios))
    error = float(np.std(ratios, ddof=1) / math.sqrt(len(ratios)))
    return EstimateWithError(value, error, "importance", rule.describe())


def integrate(f: Integrand, rule) -> EstimateWithError:
    if isinstance(rule, TensorGrid):
        return integrate_grid(f, rule)
    if isinstance(rule, ImportanceRule):
        return integrate_importance(f, rule)
    raise ConfigError(f"unknown integration rule {rule!r}")
