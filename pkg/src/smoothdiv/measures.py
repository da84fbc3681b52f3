"""Reference distributions with closed-form Gaussian-smoothed densities.

Four families are supported: a (possibly degenerate) Gaussian, a mixture of
Gaussians, a uniform distribution on an axis-aligned box and a weighted point
cloud.  For each of them ``P * phi_sigma`` has a closed form, which makes the
variance function ``Var_P(phi_sigma(x - .))`` and the covariance kernel of the
limiting Gaussian process cheap to evaluate exactly.

Points are passed as arrays of shape ``(d,)`` (one point) or ``(k, d)``.  In
one dimension a flat array of length ``k`` is read as ``k`` points.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, logsumexp

from .errors import ConfigError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# Negative variances below this relative level are roundoff and get clamped.
VARIANCE_TOLERANCE = 1e-10

TAIL_DRAWS = 10**6
TAIL_SEED = 0x7A11
_PSD_TOLERANCE = 1e-12


def check_sigma(sigma) -> float:
    """Validate a smoothing parameter and return it as a float."""
    try:
        value = float(sigma)
    except (TypeError, ValueError):
        raise ConfigError(f"sigma must be a positive real, got {sigma!r}") from None
    if not (value > 0.0 and math.isfinite(value)):
        raise ConfigError(f"sigma must be > 0 and finite, got {sigma!r}")
    return value


def _as_points(x: ArrayLike, d: int) -> tuple[NDArray[np.float64], bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise ConfigError(f"scalar point given for dimension {d}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.shape[0] == d:
            return arr.reshape(1, d), True
        if d == 1:
            return arr.reshape(-1, 1), False
        raise ConfigError(f"point of length {arr.shape[0]} given for dimension {d}")
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise ConfigError(f"points of shape {arr.shape} given for dimension {d}")


def _unwrap(values: NDArray[np.float64], single: bool):
    return float(values[0]) if single else values


def _gauss_logpdf(x: NDArray[np.float64], mean: NDArray[np.float64],
                  cov: NDArray[np.float64]) -> NDArray[np.float64]:
    """Log density of N(mean, cov) at the rows of ``x``; ``cov`` must be PD."""
    d = mean.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is not positive definite") from None
    z = solve_triangular(chol, (x - mean).T, lower=True)
    half_logdet = np.log(np.diag(chol)).sum()
    return -0.5 * np.einsum("ij,ij->j", z, z) - half_logdet - 0.5 * d * LOG_2PI


def _log_ndtr_diff(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """log(Phi(a) - Phi(b)) for a > b, accurate in both tails."""
    upper = b > 0
    hi = np.where(upper, -b, a)
    lo = np.where(upper, -a, b)
    log_hi = log_ndtr(hi)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_ndtr(lo) - log_hi))


def log_gaussian_density(x: ArrayLike, sigma: float):
    """Log of the isotropic Gaussian density ``phi_sigma`` at ``x``.

    The dimension is read from the last axis of ``x``.
    """
    sigma = check_sigma(sigma)
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    d = arr.shape[-1]
    sq = np.sum(arr * arr, axis=-1)
    out = -0.5 * sq / sigma**2 - 0.5 * d * (LOG_2PI + 2.0 * math.log(sigma))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_density(x: ArrayLike, sigma: float):
    """Isotropic Gaussian density ``(2 pi sigma^2)^{-d/2} exp(-|x|^2 / (2 sigma^2))``.

    Examples
    --------
    >>> round(gaussian_density([0.0], 1.0), 7)
    0.3989423
    """
    return np.exp(log_gaussian_density(x, sigma))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


class MeasureSpec:
    """A reference probability measure on R^d from a closed family."""

    variant: ClassVar[str] = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def mean(self) -> NDArray[np.float64]:
        raise NotImplementedError

    @property
    def covariance(self) -> NDArray[np.float64]:
        raise NotImplementedError

    def draw(self, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
        raise NotImplementedError

    def log_smoothed(self, sigma: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """log(P * phi_sigma) at the rows of ``x`` (already validated)."""
        raise NotImplementedError

    def log_smoothed_floor(self, sigma: float, lo: NDArray, hi: NDArray) -> float:
        """A lower bound on log(P * phi_sigma) over the box [lo, hi]."""
        raise NotImplementedError

    def support_radius(self) -> float | None:
        """Radius of the support around the mean, or None if unbounded."""
        return None

    def gaussian_weight_mean(self, a: float, shift: NDArray) -> float:
        """E exp(-a |X - shift|^2)."""
        raise NotImplementedError

    def translated(self, c: ArrayLike) -> "MeasureSpec":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def key(self) -> str:
        return repr(self.to_dict())


def _check_weights(weights: ArrayLike, count: int, what: str) -> NDArray[np.float64]:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != count:
        raise ConfigError(f"{what}: expected {count} weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError(f"{what}: weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ConfigError(f"{what}: weights sum to {w.sum()!r}, not 1")
    return w


def _gauss_floor(mean: NDArray, cov: NDArray, lo: NDArray, hi: NDArray) -> float:
    # Mahalanobis distance over a box is maximised at a vertex and bounded by
    # the farthest vertex's Euclidean distance over lambda_min.
    lam = np.linalg.eigvalsh(cov)
    far_sq = np.sum(np.maximum((lo - mean) ** 2, (hi - mean) ** 2))
    return float(-0.5 * far_sq / lam[0] - 0.5 * np.sum(np.log(lam)) - 0.5 * mean.size * LOG_2PI)


@dataclass(frozen=True, eq=False)
class Gaussian(MeasureSpec):
    """N(mean, covariance); the covariance may be singular."""

    loc: ArrayLike
    cov: ArrayLike
    variant: ClassVar[str] = "gaussian"
    _eig: tuple = field(init=False, repr=False)

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.loc, dtype=float)).copy()
        d = loc.shape[0]
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(d)
        cov = cov.reshape(d, d).copy()
        if not np.all(np.isfinite(loc)) or not np.all(np.isfinite(cov)):
            raise ConfigError("gaussian: mean and covariance must be finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ConfigError("gaussian: covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        lam, vec = np.linalg.eigh(cov)
        if lam[0] < -_PSD_TOLERANCE * max(1.0, lam[-1]):
            raise ConfigError(f"gaussian: covariance is not PSD (eigenvalue {lam[0]:.3g})")
        lam = np.clip(lam, 0.0, None)
        loc.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_eig", (lam, vec))

    @property
    def dim(self) -> int:
        return self.loc.shape[0]

    @property
    def mean(self):
        return self.loc

    @property
    def covariance(self):
        return self.cov

    @property
    def eigenvalues(self) -> NDArray[np.float64]:
        return self._eig[0]

    def is_isotropic(self) -> bool:
        lam = self.eigenvalues
        return bool(np.allclose(self.cov, lam.mean() * np.eye(self.dim), rtol=0, atol=1e-14 * max(1.0, lam[-1])))

    def draw(self, n, rng):
        lam, vec = self._eig
        z = rng.standard_normal((n, self.dim))
        return self.loc + (z * np.sqrt(lam)) @ vec.T

    def log_smoothed(self, sigma, x):
        return _gauss_logpdf(x, self.loc, self.cov + sigma**2 * np.eye(self.dim))

    def log_density(self, x):
        """Log density of the (unsmoothed) Gaussian; requires a PD covariance."""
        return _gauss_logpdf(x, self.loc, self.cov)

    def log_smoothed_floor(self, sigma, lo, hi):
        return _gauss_floor(self.loc, self.cov + sigma**2 * np.eye(self.dim), lo, hi)

    def gaussian_weight_mean(self, a, shift):
        m = self.loc - shift
        s = np.eye(self.dim) + 2.0 * a * self.cov
        _, logdet = np.linalg.slogdet(s)
        quad = float(m @ np.linalg.solve(s, m))
        return float(np.exp(-0.5 * logdet - a * quad))

    def translated(self, c):
        return Gaussian(self.loc + np.asarray(c, dtype=float), self.cov)

    def to_dict(self):
        return {"variant": self.variant, "dimension": self.dim,
                "mean": self.loc.tolist(), "covariance": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixture(MeasureSpec):
    """Finite mixture of Gaussians."""

    weights: ArrayLike
    components: tuple
    variant: ClassVar[str] = "gaussian_mixture"

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps or not all(isinstance(c, Gaussian) for c in comps):
            raise ConfigError("gaussian_mixture: components must be a nonempty list of gaussians")
        if len({c.dim for c in comps}) != 1:
            raise ConfigError("gaussian_mixture: components differ in dimension")
        w = _check_weights(self.weights, len(comps), "gaussian_mixture")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def mean(self):
        return np.sum([w * c.loc for w, c in zip(self.weights, self.components)], axis=0)

    @property
    def covariance(self):
        mu = self.mean
        return np.sum([w * (c.cov + np.outer(c.loc - mu, c.loc - mu))
                       for w, c in zip(self.weights, self.components)], axis=0)

    def draw(self, n, rng):
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = labels == k
            lam, vec = comp._eig
            out[idx] = comp.loc + (z[idx] * np.sqrt(lam)) @ vec.T
        return out

    def _mix(self, parts):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(np.stack(parts) + logw[:, None], axis=0)

    def log_smoothed(self, sigma, x):
        return self._mix([c.log_smoothed(sigma, x) for c in self.components])

    def log_density(self, x):
        return self._mix([c.log_density(x) for c in self.components])

    def log_smoothed_floor(self, sigma, lo, hi):
        floors = np.array([c.log_smoothed_floor(sigma, lo, hi) for c in self.components])
        with np.errstate(divide="ignore"):
            return float(logsumexp(floors + np.log(self.weights)))

    def support_radius(self):
        return None

    def gaussian_weight_mean(self, a, shift):
        return float(sum(w * c.gaussian_weight_mean(a, shift)
                         for w, c in zip(self.weights, self.components)))

    def translated(self, c):
        return GaussianMixture(self.weights, tuple(comp.translated(c) for comp in self.components))

    def to_dict(self):
        return {"variant": self.variant, "dimension": self.dim,
                "weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}


@dataclass(frozen=True, eq=False)
class UniformBox(MeasureSpec):
    """Uniform distribution on the box [lo, hi]."""

    lo: ArrayLike
    hi: ArrayLike
    variant: ClassVar[str] = "uniform_box"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("uniform_box: lo and hi must be vectors of equal length")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(lo >= hi):
            raise ConfigError("uniform_box: need finite lo < hi componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def covariance(self):
        return np.diag((self.hi - self.lo) ** 2 / 12.0)

    def draw(self, n, rng):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def _log_axis(self, sigma, x):
        a = (x - self.lo) / sigma
        b = (x - self.hi) / sigma
        return _log_ndtr_diff(a, b) - np.log(self.hi - self.lo)

    def log_smoothed(self, sigma, x):
        return self._log_axis(sigma, x).sum(axis=1)

    def log_smoothed_floor(self, sigma, lo, hi):
        # Each axis factor is log-concave, so its minimum over an interval sits
        # at an endpoint.
        ends = self._log_axis(sigma, np.stack([lo, hi]))
        return float(ends.min(axis=0).sum())

    def support_radius(self):
        return float(0.5 * np.linalg.norm(self.hi - self.lo))

    def gaussian_weight_mean(self, a, shift):
        if a == 0:
            return 1.0
        s = math.sqrt(2.0 * a)
        lo = (self.lo - shift) * s
        hi = (self.hi - shift) * s
        per_axis = _log_ndtr_diff(hi, lo) + 0.5 * math.log(math.pi / a) - np.log(self.hi - self.lo)
        return float(np.exp(per_axis.sum()))

    def translated(self, c):
        c = np.asarray(c, dtype=float)
        return UniformBox(self.lo + c, self.hi + c)

    def to_dict(self):
        return {"variant": self.variant, "dimension": self.dim,
                "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class PointCloud(MeasureSpec):
    """Discrete distribution on finitely many points."""

    points: ArrayLike
    weights: ArrayLike = None
    variant: ClassVar[str] = "point_cloud"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or not np.all(np.isfinite(pts)):
            raise ConfigError("point_cloud: points must be a nonempty finite (m, d) array")
        pts = pts.copy()
        m = pts.shape[0]
        w = np.full(m, 1.0 / m) if self.weights is None else _check_weights(self.weights, m, "point_cloud")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def mean(self):
        return self.weights @ self.points

    @property
    def covariance(self):
        c = self.points - self.mean
        return (c * self.weights[:, None]).T @ c

    def draw(self, n, rng):
        idx = rng.choice(self.points.shape[0], size=n, p=self.weights)
        return self.points[idx].copy()

    def log_smoothed(self, sigma, x):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        const = -0.5 * self.dim * (LOG_2PI + 2.0 * math.log(sigma))
        out = np.empty(x.shape[0])
        step = max(1, 2_000_000 // self.points.shape[0])
        for start in range(0, x.shape[0], step):
            chunk = x[start:start + step]
            sq = np.sum((chunk[:, None, :] - self.points[None, :, :]) ** 2, axis=2)
            out[start:start + step] = logsumexp(logw - 0.5 * sq / sigma**2, axis=1)
        return out + const

    def log_smoothed_floor(self, sigma, lo, hi):
        iso = sigma**2 * np.eye(self.dim)
        floors = np.array([_gauss_floor(p, iso, lo, hi) for p in self.points])
        with np.errstate(divide="ignore"):
            return float(logsumexp(floors + np.log(self.weights)))

    def support_radius(self):
        return float(np.max(np.linalg.norm(self.points - self.mean, axis=1)))

    def gaussian_weight_mean(self, a, shift):
        sq = np.sum((self.points - shift) ** 2, axis=1)
        return float(self.weights @ np.exp(-a * sq))

    def translated(self, c):
        return PointCloud(self.points + np.asarray(c, dtype=float), self.weights)

    def to_dict(self):
        return {"variant": self.variant, "dimension": self.dim,
                "points": self.points.tolist(), "weights": self.weights.tolist()}


_VARIANTS = {cls.variant: cls for cls in (Gaussian, GaussianMixture, UniformBox, PointCloud)}


def spec_from_dict(doc: dict) -> MeasureSpec:
    """Build a spec from a plain mapping (as read from a config file)."""
    if not isinstance(doc, dict):
        raise ConfigError("measure must be a mapping")
    variant = str(doc.get("variant", "")).lower().replace("-", "_")
    if variant not in _VARIANTS:
        raise ConfigError(f"unknown variant {doc.get('variant')!r}; expected one of {sorted(_VARIANTS)}")
    try:
        if variant == "gaussian":
            spec = Gaussian(doc["mean"], doc["covariance"])
        elif variant == "gaussian_mixture":
            comps = tuple(spec_from_dict({"variant": "gaussian", **c}) for c in doc["components"])
            spec = GaussianMixture(doc["weights"], comps)
        elif variant == "uniform_box":
            spec = UniformBox(doc["lo"], doc["hi"])
        else:
            spec = PointCloud(doc["points"], doc.get("weights"))
    except KeyError as exc:
        raise ConfigError(f"{variant}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{variant}: {exc}") from None
    if "dimension" in doc and int(doc["dimension"]) != spec.dim:
        raise ConfigError(f"{variant}: dimension {doc['dimension']} does not match data ({spec.dim})")
    return spec


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sample:
    """``n`` i.i.d. observations from ``source`` generated with ``seed``."""

    points: NDArray[np.float64]
    seed: int
    source: MeasureSpec

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def sample(spec: MeasureSpec, n: int, seed: int) -> Sample:
    """Draw ``n`` i.i.d. points from ``spec``; deterministic in ``(spec, n, seed)``."""
    n = int(n)
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got {n}")
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    pts = spec.draw(n, np.random.default_rng(seed))
    pts.setflags(write=False)
    return Sample(pts, seed, spec)


# ---------------------------------------------------------------------------
# Smoothed densities, variance function and covariance kernel
# ---------------------------------------------------------------------------


def log_smoothed_density(spec: MeasureSpec, sigma: float, x: ArrayLike):
    sigma = check_sigma(sigma)
    pts, single = _as_points(x, spec.dim)
    return _unwrap(spec.log_smoothed(sigma, pts), single)


def smoothed_density(spec: MeasureSpec, sigma: float, x: ArrayLike):
    """Density of ``P * N_sigma`` at ``x``, in closed form."""
    return np.exp(log_smoothed_density(spec, sigma, x))


def _log_squared_kernel_mean(spec, sigma, pts):
    return spec.log_smoothed(sigma / math.sqrt(2.0), pts) - 0.5 * spec.dim * math.log(4.0 * math.pi * sigma**2)


def squared_kernel_mean(spec: MeasureSpec, sigma: float, x: ArrayLike):
    """E_P[phi_sigma(x - X)^2] via phi_sigma^2 = (4 pi sigma^2)^{-d/2} phi_{sigma/sqrt 2}."""
    sigma = check_sigma(sigma)
    pts, single = _as_points(x, spec.dim)
    return _unwrap(np.exp(_log_squared_kernel_mean(spec, sigma, pts)), single)


def _clamp_variance(v, scale):
    bad = v < -VARIANCE_TOLERANCE * scale
    if np.any(bad):
        worst = float(np.min(v[bad] / scale[bad]))
        raise NumericalError(f"variance function is negative beyond roundoff (relative {worst:.3g})")
    return np.maximum(v, 0.0)


_ATOM_BLOCK = 2_000_000


def _discrete_atoms(spec):
    """Atoms and weights when P is discrete (point clouds, zero-covariance Gaussians)."""
    if isinstance(spec, PointCloud):
        return spec.points, spec.weights
    if isinstance(spec, Gaussian) and spec.eigenvalues[-1] == 0.0:
        return spec.loc.reshape(1, -1), np.ones(1)
    return None


def _discrete_parts(atoms, weights, sigma, pts):
    """log rho and the ratios phi_sigma(x - a_j) / rho(x), shape (k, m).

    For discrete P the variance is the weighted centered sum
    rho^2 * sum_j w_j (r_j - 1)^2, which has no cancellation and vanishes
    exactly for a single atom.
    """
    m = atoms.shape[0]
    step = max(1, _ATOM_BLOCK // m)
    log_rho = np.empty(pts.shape[0])
    ratios = np.empty((pts.shape[0], m))
    logw = np.log(weights)
    for start in range(0, pts.shape[0], step):
        block = pts[start:start + step]
        lphi = log_gaussian_density(block[:, None, :] - atoms[None, :, :], sigma).reshape(len(block), m)
        lr = logsumexp(lphi + logw, axis=1)
        log_rho[start:start + step] = lr
        ratios[start:start + step] = np.exp(lphi - lr[:, None])
    return log_rho, ratios


def _variance_parts(spec, sigma, pts):
    log_sq = _log_squared_kernel_mean(spec, sigma, pts)
    log_rho = spec.log_smoothed(sigma, pts)
    return log_sq, log_rho


def variance_function(spec: MeasureSpec, sigma: float, x: ArrayLike):
    """v(x) = Var_P(phi_sigma(x - .)), clamped at zero for roundoff-level negatives.

    Raises
    ------
    NumericalError
        If cancellation leaves a relative negativity worse than 1e-10.
    """
    sigma = check_sigma(sigma)
    pts, single = _as_points(x, spec.dim)
    atoms = _discrete_atoms(spec)
    if atoms is not None:
        log_rho, r = _discrete_parts(*atoms, sigma, pts)
        return _unwrap(np.exp(2.0 * log_rho) * (((r - 1.0) ** 2) @ atoms[1]), single)
    log_sq, log_rho = _variance_parts(spec, sigma, pts)
    sq = np.exp(log_sq)
    return _unwrap(_clamp_variance(sq - np.exp(2.0 * log_rho), sq), single)


def variance_over_density(spec: MeasureSpec, sigma: float, x: ArrayLike):
    """v(x) / (P * phi_sigma)(x), evaluated in log space so far tails stay finite."""
    sigma = check_sigma(sigma)
    pts, single = _as_points(x, spec.dim)
    atoms = _discrete_atoms(spec)
    if atoms is not None:
        log_rho, r = _discrete_parts(*atoms, sigma, pts)
        return _unwrap(np.exp(log_rho) * (((r - 1.0) ** 2) @ atoms[1]), single)
    log_sq, log_rho = _variance_parts(spec, sigma, pts)
    ratio = np.exp(log_sq - log_rho)
    return _unwrap(_clamp_variance(ratio - np.exp(log_rho), ratio), single)


def covariance_kernel(spec: MeasureSpec, sigma: float, x: ArrayLike, y: ArrayLike):
    """Cov_P(phi_sigma(x - .), phi_sigma(y - .)) for paired rows of ``x`` and ``y``.

    Uses phi_s(x - z) phi_s(y - z) = phi_{s sqrt 2}(x - y) phi_{s / sqrt 2}((x + y)/2 - z).
    """
    sigma = check_sigma(sigma)
    xp, single = _as_points(x, spec.dim)
    yp, _ = _as_points(y, spec.dim)
    xp, yp = np.broadcast_arrays(xp, yp)
    return _unwrap(_kernel_rows(spec, sigma, xp, yp), single)


def _kernel_rows(spec, sigma, xp, yp):
    atoms = _discrete_atoms(spec)
    if atoms is not None:
        lx, rx = _discrete_parts(*atoms, sigma, xp)
        ly, ry = _discrete_parts(*atoms, sigma, yp)
        return np.exp(lx + ly) * (((rx - 1.0) * (ry - 1.0)) @ atoms[1])
    log_prod = (log_gaussian_density(xp - yp, sigma * math.sqrt(2.0))
                + spec.log_smoothed(sigma / math.sqrt(2.0), 0.5 * (xp + yp)))
    return np.exp(log_prod) - np.exp(spec.log_smoothed(sigma, xp) + spec.log_smoothed(sigma, yp))


def covariance_matrix(spec: MeasureSpec, sigma: float, nodes: ArrayLike) -> NDArray[np.float64]:
    """Gram matrix of the covariance kernel on ``nodes``; exactly symmetric."""
    sigma = check_sigma(sigma)
    pts, _ = _as_points(nodes, spec.dim)
    atoms = _discrete_atoms(spec)
    if atoms is not None:
        # K = F F^T with centered features, so it is PSD by construction.
        log_rho, r = _discrete_parts(*atoms, sigma, pts)
        feats = np.exp(log_rho)[:, None] * (r - 1.0) * np.sqrt(atoms[1])
        out = feats @ feats.T
        return 0.5 * (out + out.T)
    g, d = pts.shape
    log_rho = spec.log_smoothed(sigma, pts)
    out = np.empty((g, g))
    rows = max(1, 1_000_000 // g)
    for start in range(0, g, rows):
        block = pts[start:start + rows]
        diff = (block[:, None, :] - pts[None, :, :]).reshape(-1, d)
        mid = 0.5 * (block[:, None, :] + pts[None, :, :]).reshape(-1, d)
        log_prod = log_gaussian_density(diff, sigma * math.sqrt(2.0)) + spec.log_smoothed(sigma / math.sqrt(2.0), mid)
        cross = log_rho[start:start + rows, None] + log_rho[None, :]
        out[start:start + rows] = np.exp(log_prod).reshape(len(block), g) - np.exp(cross)
    return 0.5 * (out + out.T)


def log_density_floor(spec: MeasureSpec, sigma: float, lo: ArrayLike, hi: ArrayLike) -> float:
    """A guaranteed lower bound of log(P * phi_sigma) over the box [lo, hi]."""
    sigma = check_sigma(sigma)
    return spec.log_smoothed_floor(sigma, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))


# ---------------------------------------------------------------------------
# Tails and sub-Gaussian parameters
# ---------------------------------------------------------------------------

_tail_cache: dict[str, NDArray[np.float64]] = {}
_tail_lock = threading.Lock()


def _tail_norms(spec: MeasureSpec) -> NDArray[np.float64]:
    key = spec.key()
    table = _tail_cache.get(key)
    if table is None:
        with _tail_lock:
            table = _tail_cache.get(key)
            if table is None:
                draws = spec.draw(TAIL_DRAWS, np.random.default_rng(TAIL_SEED))
                table = np.sort(np.linalg.norm(draws, axis=1))
                table.setflags(write=False)
                _tail_cache[key] = table
    return table


def _isotropic_parts(spec):
    if isinstance(spec, Gaussian) and spec.is_isotropic():
        return [(1.0, spec)]
    if isinstance(spec, GaussianMixture) and all(c.is_isotropic() for c in spec.components):
        return list(zip(spec.weights, spec.components))
    return None


def tail_table(spec: MeasureSpec):
    """Step-function representation of t -> P(|X| > t), or None when analytic.

    Returns ``(radii, survival)`` with ``survival[i] = P(|X| > t)`` for
    ``radii[i] <= t < radii[i + 1]`` and survival 1 below ``radii[0]``.
    """
    if isinstance(spec, PointCloud):
        norms = np.linalg.norm(spec.points, axis=1)
        order = np.argsort(norms, kind="stable")
        radii, first = np.unique(norms[order], return_index=True)
        cum = np.cumsum(spec.weights[order])
        last = np.append(first[1:], len(order)) - 1
        return radii, np.clip(1.0 - cum[last], 0.0, 1.0)
    if _isotropic_parts(spec) is not None:
        return None
    norms = _tail_norms(spec)
    radii, first = np.unique(norms, return_index=True)
    counts = np.append(first[1:], len(norms))
    return radii, (len(norms) - counts) / len(norms)


def tail_probability(spec: MeasureSpec, t):
    """P(|X| > t) for X ~ spec.

    Exact for point clouds and (mixtures of) isotropic Gaussians; otherwise a
    cached estimate from 10^6 draws (see :func:`tail_probability_se`).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError("tail_probability needs t >= 0")
    parts = _isotropic_parts(spec)
    if parts is not None:
        out = np.zeros_like(t_arr)
        for w, comp in parts:
            s2 = float(comp.eigenvalues.mean())
            nc = float(comp.loc @ comp.loc)
            if s2 == 0.0:
                out = out + w * (math.sqrt(nc) > t_arr)
            elif nc == 0.0:
                out = out + w * stats.chi2.sf(t_arr**2 / s2, comp.dim)
            else:
                out = out + w * stats.ncx2.sf(t_arr**2 / s2, comp.dim, nc / s2)
    else:
        radii, surv = tail_table(spec)
        idx = np.searchsorted(radii, t_arr, side="right")
        out = np.where(idx == 0, 1.0, surv[np.maximum(idx - 1, 0)])
    return float(out) if out.ndim == 0 else out


def tail_probability_se(spec: MeasureSpec, t):
    """Standard error of :func:`tail_probability` (zero where it is exact)."""
    if isinstance(spec, PointCloud) or _isotropic_parts(spec) is not None:
        return 0.0 * np.asarray(t, dtype=float)
    p = tail_probability(spec, t)
    return np.sqrt(p * (1.0 - p) / TAIL_DRAWS)


def subgaussian_parameter(spec: MeasureSpec) -> float:
    """A valid (not necessarily minimal) sub-Gaussian constant beta.

    Gaussian: sqrt(lambda_max).  Bounded support of radius R about the mean:
    R, by Hoeffding's lemma.  Mixture: largest component beta plus the largest
    distance of a component mean from the overall mean.
    """
    if isinstance(spec, Gaussian):
        return float(math.sqrt(spec.eigenvalues[-1]))
    if isinstance(spec, GaussianMixture):
        mu = spec.mean
        spread = max(float(np.linalg.norm(c.loc - mu)) for c in spec.components)
        return max(subgaussian_parameter(c) for c in spec.components) + spread
    return float(spec.support_radius())


def translate(spec: MeasureSpec, c: ArrayLike) -> MeasureSpec:
    """The law of X + c."""
    return spec.translated(c)
