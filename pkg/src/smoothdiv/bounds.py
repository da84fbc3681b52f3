"""Moment bounds, sufficient conditions and finiteness probes.

Every check returns a :class:`ConditionReport` carrying both sides of the
inequality it decides, so callers can log margins and not just verdicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate as sp_integrate
from scipy import stats
from scipy.special import gammaln

from .errors import ConfigError, NumericalError
from .integration import (
    DEFAULT_EPS,
    EstimateWithError,
    TensorGrid,
    choose_box,
    default_rule,
    in_box,
    integrate,
)
from .measures import (
    Gaussian,
    MeasureSpec,
    check_sigma,
    subgaussian_parameter,
    tail_probability,
    tail_table,
    variance_function,
    variance_over_density,
)

PROBE_GROWTH = 1.5
PROBE_TOLERANCE = 1e-3
DEFAULT_ETA = 0.1
ETA_GRID = tuple(np.round(np.arange(0.01, 0.505, 0.01), 2))
_PROBE_POINTS = {1: 8000, 2: 400, 3: 80}


@dataclass(frozen=True)
class ConditionReport:
    name: str
    holds: bool
    lhs: float
    rhs: float
    relation: str = "<"
    params: dict = field(default_factory=dict)

    def to_record(self) -> str:
        """One-line JSON record with sorted keys."""
        return json.dumps({"name": self.name, "holds": bool(self.holds), "lhs": float(self.lhs),
                           "rhs": float(self.rhs), "relation": self.relation,
                           "params": _plain(self.params)}, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _integrate_truncated(f, spec, sigma, rule, eps):
    if rule is None:
        rule = default_rule(spec, sigma, eps)
    if isinstance(rule, TensorGrid):
        return integrate(f, rule)
    lo, hi = choose_box(spec, sigma, eps)
    return integrate(lambda x: np.where(in_box(x, lo, hi), f(x), 0.0), rule)


def tv_variance_integral(spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> EstimateWithError:
    """integral sqrt(Var_P(phi_sigma(x - .))) dx over the truncation box."""
    sigma = check_sigma(sigma)
    return _integrate_truncated(lambda x: np.sqrt(variance_function(spec, sigma, x)), spec, sigma, rule, eps)


def tv_upper_bound(spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> EstimateWithError:
    """Upper bound on sqrt(n) E[tv]: half the variance integral."""
    return tv_variance_integral(spec, sigma, rule, eps).scaled(0.5)


def tv_lower_bound(spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> EstimateWithError:
    """Asymptotic lower bound on sqrt(n) E[tv]: the variance integral over sqrt(2 pi)."""
    return tv_variance_integral(spec, sigma, rule, eps).scaled(1.0 / math.sqrt(2.0 * math.pi))


def chi2_mean_integral(spec: MeasureSpec, sigma: float, rule=None, eps: float = DEFAULT_EPS) -> EstimateWithError:
    """J = integral Var_P(phi_sigma(x - .)) / (P * phi_sigma)(x) dx, which equals n E[chi2]."""
    sigma = check_sigma(sigma)
    return _integrate_truncated(lambda x: variance_over_density(spec, sigma, x), spec, sigma, rule, eps)


def _tail_moment_integral(spec: MeasureSpec) -> float:
    """integral_0^inf t^{d-1} sqrt(P(|X| > t)) dt."""
    d = spec.dim
    table = tail_table(spec)
    if table is not None:
        radii, surv = table
        if surv[-1] > 0:
            raise NumericalError("tail table does not reach zero")
        # Piecewise constant survival: exact integral of t^{d-1}.
        powers = radii**d / d
        return float(powers[0] + np.sum(np.sqrt(surv[:-1]) * np.diff(powers)))

    def integrand(t):
        return t ** (d - 1) * math.sqrt(tail_probability(spec, t))

    scale = math.sqrt(float(np.max(np.linalg.eigvalsh(spec.covariance)))) + float(np.linalg.norm(spec.mean))
    upper = max(scale, 1e-12) * (1.0 + math.sqrt(stats.chi2.isf(1e-12, d)))
    total, _ = sp_integrate.quad(integrand, 0.0, upper, limit=200)
    for _ in range(40):
        more, _ = sp_integrate.quad(integrand, upper, PROBE_GROWTH * upper, limit=200)
        total += more
        upper *= PROBE_GROWTH
        if more <= 1e-12 * total:
            return total
    raise NumericalError("tail integral does not saturate; the moment condition may fail")


def lemma1_bound(spec: MeasureSpec, sigma: float) -> float:
    """8^{d/2} + 2^{d/2+1} / (sigma^d Gamma(d/2)) * integral t^{d-1} sqrt(P(|X| > t)) dt.

    An upper bound on :func:`tv_variance_integral` that needs only the tails of P.
    """
    sigma = check_sigma(sigma)
    d = spec.dim
    log_const = (0.5 * d + 1.0) * math.log(2.0) - d * math.log(sigma) - gammaln(0.5 * d)
    return 8.0 ** (0.5 * d) + math.exp(log_const) * _tail_moment_integral(spec)


def lemma2_check(beta: float, sigma: float) -> ConditionReport:
    """Sub-Gaussian sufficient condition for finite J: beta < sigma / sqrt 2."""
    sigma = check_sigma(sigma)
    rhs = sigma / math.sqrt(2.0)
    return ConditionReport("lemma2", beta < rhs, float(beta), rhs, "<", {"beta": float(beta), "sigma": sigma})


def lemma2_eta_limit(sigma: float, eta: float) -> float:
    """Largest beta for which the explicit bound at ``eta`` is finite."""
    return sigma * math.sqrt((1.0 - eta) / (2.0 * (1.0 + eta)))


def lemma2_bound(spec: MeasureSpec, sigma: float, beta: float | None = None, eta: float = DEFAULT_ETA) -> float:
    """Explicit upper bound on J for beta-sub-Gaussian P.

    (1 - eta)^{-d/2} / C * [1 - 2 (1 + eta) beta^2 / ((1 - eta) sigma^2)]^{-d/2}
    with C = E exp(-(1 + 1/eta) |X - E X|^2 / (2 sigma^2)).  J is translation
    invariant, so P is centered first.

    Raises
    ------
    ConfigError
        If ``eta`` is outside (0, 1) or beta >= sigma sqrt((1 - eta) / (2 (1 + eta))).
    """
    sigma = check_sigma(sigma)
    if not 0.0 < eta < 1.0:
        raise ConfigError(f"eta must lie in (0, 1), got {eta!r}")
    beta = subgaussian_parameter(spec) if beta is None else float(beta)
    limit = lemma2_eta_limit(sigma, eta)
    if not beta < limit:
        raise ConfigError(f"beta={beta:.6g} violates beta < {limit:.6g} required at eta={eta}")
    d = spec.dim
    c = spec.gaussian_weight_mean((1.0 + 1.0 / eta) / (2.0 * sigma**2), spec.mean)
    if c <= 0.0:
        raise NumericalError("normalising constant underflows")
    inner = 1.0 - 2.0 * (1.0 + eta) * beta**2 / ((1.0 - eta) * sigma**2)
    return (1.0 - eta) ** (-0.5 * d) / c * inner ** (-0.5 * d)


def lemma2_best_bound(spec: MeasureSpec, sigma: float, beta: float | None = None,
                      etas=ETA_GRID) -> tuple[float, float]:
    """Smallest :func:`lemma2_bound` over the admissible values in ``etas``.

    Returns ``(bound, eta)``.
    """
    sigma = check_sigma(sigma)
    beta = subgaussian_parameter(spec) if beta is None else float(beta)
    best = None
    for eta in etas:
        if beta < lemma2_eta_limit(sigma, eta):
            value = lemma2_bound(spec, sigma, beta, eta)
            if best is None or value < best[0]:
                best = (float(value), float(eta))
    if best is None:
        raise ConfigError(f"no eta in the grid admits beta={beta:.6g}")
    return best


def lemma3_check(covariance: ArrayLike, sigma: float) -> ConditionReport:
    """Gaussian sufficient condition for finite J: lambda_max < lambda_min + sigma^2 / 2."""
    sigma = check_sigma(sigma)
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise ConfigError("covariance must be a symmetric square matrix")
    lam = np.linalg.eigvalsh(cov)
    if lam[0] < -1e-12 * max(1.0, lam[-1]):
        raise ConfigError("covariance must be positive semidefinite")
    rhs = float(lam[0] + 0.5 * sigma**2)
    return ConditionReport("lemma3", bool(lam[-1] < rhs), float(lam[-1]), rhs, "<",
                           {"lambda_min": float(lam[0]), "lambda_max": float(lam[-1]), "sigma": sigma})


def lemma3_general_check(beta: float, gamma: float, sigma: float) -> ConditionReport:
    """Condition beta < sqrt((sigma^2 + 2 gamma) / 2) for P whose centered density
    is bounded below by c exp(-|x|^2 / (2 gamma))."""
    sigma = check_sigma(sigma)
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    rhs = math.sqrt((sigma**2 + 2.0 * gamma) / 2.0)
    return ConditionReport("lemma3", beta < rhs, float(beta), rhs, "<",
                           {"beta": float(beta), "gamma": float(gamma), "sigma": sigma})


def gaussian_lemma3_check(spec: Gaussian, sigma: float) -> ConditionReport:
    """Lemma-3 check for a Gaussian with beta = sqrt(lambda_max), gamma = lambda_min."""
    return lemma3_check(spec.covariance, sigma)


def mgf_check(spec: Gaussian, eta_fracs, draws: int = 10**6, seed: int = 0) -> list[ConditionReport]:
    """Monte Carlo check of E exp(eta |X - mu|^2) <= (1 - 2 beta^2 eta)^{-d/2}.

    ``eta = frac / (2 beta^2)`` with beta from :func:`subgaussian_parameter`.
    A fraction holds when the estimate is at most the bound times
    ``1 + 3 * relative standard error``.
    """
    if not isinstance(spec, Gaussian):
        raise ConfigError("mgf_check needs a gaussian spec")
    beta = subgaussian_parameter(spec)
    if beta <= 0:
        raise ConfigError("mgf_check needs a nondegenerate gaussian")
    d = spec.dim
    centered = spec.draw(draws, np.random.default_rng(seed)) - spec.mean
    sq = np.einsum("ij,ij->i", centered, centered)
    reports = []
    for frac in eta_fracs:
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"eta fraction must lie in (0, 1), got {frac!r}")
        eta = frac / (2.0 * beta**2)
        values = np.exp(eta * sq)
        lhs = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(draws))
        rhs = (1.0 - 2.0 * beta**2 * eta) ** (-0.5 * d)
        exact = float(np.prod((1.0 - 2.0 * spec.eigenvalues * eta) ** -0.5))
        holds = lhs <= rhs * (1.0 + 3.0 * se / lhs)
        reports.append(ConditionReport("mgf", bool(holds), lhs, rhs, "<=",
                                       {"fraction": float(frac), "eta": eta, "beta": beta,
                                        "se": se, "exact_lhs": exact, "draws": draws}))
    return reports


def concentration_bound(n: int, t: float) -> float:
    """Tail bound exp(-n t^2 / 2) for tv deviations above its mean."""
    if n < 1 or not t > 0:
        raise ConfigError("concentration bound needs n >= 1 and t > 0")
    return math.exp(-0.5 * n * t * t)


# ---------------------------------------------------------------------------
# Truncated integrals over growing balls
# ---------------------------------------------------------------------------


def _ball_integral(f, spec: MeasureSpec, radius: float, points_per_axis: int | None) -> float:
    d = spec.dim
    if d > 3:
        raise ConfigError("ball-truncated probes use grids and support d <= 3")
    p = points_per_axis or _PROBE_POINTS[d]
    center = spec.mean
    grid = TensorGrid(center - radius, center + radius, p)
    nodes = grid.nodes
    inside = np.sum((nodes - center) ** 2, axis=1) <= radius**2
    values = np.zeros(nodes.shape[0])
    values[inside] = f(nodes[inside])
    return grid.weight * float(np.sum(values))


def chi2_divergence_probe(spec: MeasureSpec, sigma: float, radii, points_per_axis: int | None = None) -> list[float]:
    """J restricted to balls of the given radii about the mean of P.

    Growth that persists at large radii is the signature of an infinite J.
    """
    sigma = check_sigma(sigma)
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
        raise ConfigError("radii must be positive and increasing")
    return [_ball_integral(lambda x: variance_over_density(spec, sigma, x), spec, r, points_per_axis)
            for r in radii]


def tv_divergence_probe(spec: MeasureSpec, sigma: float, radii, points_per_axis: int | None = None) -> list[float]:
    """The variance integral restricted to balls of the given radii about the mean."""
    sigma = check_sigma(sigma)
    return [_ball_integral(lambda x: np.sqrt(variance_function(spec, sigma, x)), spec, r, points_per_axis)
            for r in radii]


def condition_probe(spec: MeasureSpec, sigma: float, which: str = "chi2", radius: float | None = None,
                    points_per_axis: int | None = None) -> ConditionReport:
    """Decide finiteness of the tv or chi2 integral numerically.

    Holds when the ball-truncated integral changes by less than 0.1% as the
    radius grows by 50%.  The default radius is the half-width of the
    1e-8 truncation box.
    """
    sigma = check_sigma(sigma)
    if radius is None:
        lo, hi = choose_box(spec, sigma, DEFAULT_EPS)
        radius = float(0.5 * np.max(hi - lo))
    probe = {"chi2": chi2_divergence_probe, "tv": tv_divergence_probe}.get(which)
    if probe is None:
        raise ConfigError(f"unknown condition {which!r}; expected 'tv' or 'chi2'")
    small, large = probe(spec, sigma, [radius, PROBE_GROWTH * radius], points_per_axis)
    change = abs(large - small) / large if large > 0 else 0.0
    return ConditionReport(f"{which}_condition", change < PROBE_TOLERANCE, change, PROBE_TOLERANCE, "<",
                           {"radius": radius, "growth": PROBE_GROWTH, "inner": small, "outer": large})
