"""Smooth TV distance and smooth chi^2-divergence between P_n and P.

Both divergences are computed through densities.  P_n * N_sigma has density
``mean_i phi_sigma(x - X_i)`` and P * N_sigma has the closed form from
:mod:`smoothdiv.measures`, so

    tv   = 1/2 * integral |p_n - p|
    chi2 = integral (p_n - p)^2 / p

with the integral taken over a truncation box by the chosen rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from .errors import ConfigError, NumericalError
from .integration import (
    DEFAULT_EPS,
    ImportanceRule,
    TensorGrid,
    default_rule,
    in_box,
    rule_box,
)
from .measures import (
    LOG_2PI,
    MeasureSpec,
    Sample,
    _as_points,
    _discrete_atoms,
    check_sigma,
    log_density_floor,
)
from .measures import sample as draw_sample

_BLOCK = 4_000_000


@dataclass(frozen=True)
class DivergenceResult:
    value: float
    integration_error: float
    n: int
    sigma: float
    measure: str


def _points_of(sample) -> NDArray[np.float64]:
    pts = sample.points if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] < 1:
        raise ConfigError("sample must be nonempty")
    return pts


def _kernel_mixture(centers: NDArray, weights: NDArray, sigma: float, x: NDArray) -> NDArray[np.float64]:
    """sum_j weights[j] * phi_sigma(x - centers[j]) at each row of ``x``."""
    m, d = centers.shape
    const = math.exp(-0.5 * d * (LOG_2PI + 2.0 * math.log(sigma)))
    scale = -0.5 / sigma**2
    out = np.empty(x.shape[0])
    step = max(1, _BLOCK // m)
    for start in range(0, x.shape[0], step):
        sq = cdist(x[start:start + step], centers, "sqeuclidean")
        np.multiply(sq, scale, out=sq)
        np.exp(sq, out=sq)
        out[start:start + step] = sq @ weights
    return const * out


def _atoms(points: NDArray) -> tuple[NDArray, NDArray]:
    """Distinct sample points with their empirical weights."""
    atoms, counts = np.unique(points, axis=0, return_counts=True)
    return atoms, counts / points.shape[0]


def _kernel_mean(points: NDArray, sigma: float, x: NDArray) -> NDArray[np.float64]:
    return _kernel_mixture(*_atoms(points), sigma, x)


def empirical_smoothed_density(sample, sigma: float, x: ArrayLike):
    """Density of P_n * N_sigma at ``x``: (1/n) sum_i phi_sigma(x - X_i)."""
    sigma = check_sigma(sigma)
    points = _points_of(sample)
    pts, single = _as_points(x, points.shape[1])
    values = _kernel_mean(points, sigma, pts)
    return float(values[0]) if single else values


@dataclass
class _NodeSet:
    nodes: NDArray[np.float64]
    weights: NDArray[np.float64] | float
    rho: NDArray[np.float64]
    denom: NDArray[np.float64]


class DivergenceEstimator:
    """Estimates both divergences for many samples against one reference.

    The reference density, integration nodes and chi^2 denominator floor are
    computed once at construction.

    Parameters
    ----------
    spec : MeasureSpec
        Reference distribution P.
    sigma : float
        Smoothing parameter.
    rule : TensorGrid or ImportanceRule, optional
        Defaults to :func:`smoothdiv.integration.default_rule`.
    eps : float
        Smoothed tail mass left outside the truncation box.
    """

    def __init__(self, spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS):
        self.spec = spec
        self.sigma = check_sigma(sigma)
        self.rule = default_rule(spec, self.sigma, eps) if rule is None else rule
        if self.rule.dim != spec.dim:
            raise ConfigError("integration rule and reference differ in dimension")
        self.lo, self.hi = rule_box(self.rule, spec, self.sigma, eps)
        log_floor = log_density_floor(spec, self.sigma, self.lo, self.hi)
        self.floor = math.exp(log_floor)
        if self.floor <= 0.0:
            raise NumericalError("reference density underflows on the truncation box")
        if isinstance(self.rule, TensorGrid):
            self._sets = [self._node_set(g.nodes, g.weight) for g in (self.rule, self.rule.halved())]
        elif isinstance(self.rule, ImportanceRule):
            x = draw_sample(self.rule.proposal, self.rule.draws, self.rule.seed).points
            self._draws = x.shape[0]
            keep = in_box(x, self.lo, self.hi)
            x = x[keep]
            w = np.exp(-self.rule.proposal.log_density(x))
            self._sets = [self._node_set(x, w)]
        else:
            raise ConfigError(f"unknown integration rule {self.rule!r}")

    def _node_set(self, nodes, weights) -> _NodeSet:
        # Discrete references go through the same kernel sum as the empirical
        # density, so a sample sitting on the atoms gives exactly zero.
        atoms = _discrete_atoms(self.spec)
        if atoms is None:
            rho = np.exp(self.spec.log_smoothed(self.sigma, nodes))
        else:
            rho = _kernel_mixture(atoms[0], atoms[1], self.sigma, nodes)
        return _NodeSet(nodes, weights, rho, np.maximum(rho, self.floor))

    def _reduce(self, integrands: list[NDArray]) -> tuple[float, float]:
        if isinstance(self.rule, TensorGrid):
            fine, coarse = (s.weights * float(np.sum(f)) for s, f in zip(self._sets, integrands))
            return fine, abs(fine - coarse)
        ratios = np.zeros(self._draws)
        ratios[: integrands[0].shape[0]] = integrands[0] * self._sets[0].weights
        if not np.all(np.isfinite(ratios)):
            raise NumericalError("importance ratios are not finite")
        return float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(self._draws))

    def estimate(self, sample) -> tuple[DivergenceResult, DivergenceResult]:
        """Return ``(tv, chi2)`` results for one sample."""
        points = _points_of(sample)
        if points.shape[1] != self.spec.dim:
            raise ConfigError(f"sample dimension {points.shape[1]} != reference dimension {self.spec.dim}")
        tv_parts, chi_parts = [], []
        for s in self._sets:
            diff = _kernel_mean(points, self.sigma, s.nodes) - s.rho
            tv_parts.append(0.5 * np.abs(diff))
            chi_parts.append(diff * diff / s.denom)
        n = points.shape[0]
        tv = DivergenceResult(*self._reduce(tv_parts), n, self.sigma, "tv")
        chi = DivergenceResult(*self._reduce(chi_parts), n, self.sigma, "chi2")
        return tv, chi


def smooth_divergences(sample, spec: MeasureSpec, sigma: float, rule=None,
                       eps: float = DEFAULT_EPS) -> tuple[DivergenceResult, DivergenceResult]:
    return DivergenceEstimator(spec, sigma, rule, eps).estimate(sample)


def smooth_tv(sample, spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> DivergenceResult:
    """Smooth total variation distance between the sample's empirical measure and ``spec``."""
    return smooth_divergences(sample, spec, sigma, rule, eps)[0]


def smooth_chi2(sample, spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> DivergenceResult:
    """Smooth chi^2-divergence of the sample's empirical measure from ``spec``.

    The denominator is floored at a lower bound of the reference density over
    the truncation box, so it never vanishes inside the box.
    """
    return smooth_divergences(sample, spec, sigma, rule, eps)[1]
