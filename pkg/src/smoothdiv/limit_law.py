"""Simulation of the limiting Gaussian process and its TV / chi^2 functionals.

The centered process B with covariance Cov_P(phi_sigma(x - .), phi_sigma(y - .))
is discretised on the nodes of a tensor grid and drawn through a Cholesky
factor of its covariance matrix.  A multiplier construction,
``m^{-1/2} sum_i g_i (phi_sigma(x - a_i) - P * phi_sigma(x))`` with anchors
``a_i ~ P``, provides a factorisation-free alternative in any dimension.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError, NumericalError
from .integration import MAX_GRID_DIM, TensorGrid
from .measures import (
    VARIANCE_TOLERANCE,
    MeasureSpec,
    _as_points,
    check_sigma,
    covariance_matrix,
    gaussian_density,
    sample,
)

logger = logging.getLogger(__name__)

JITTER_START = 1e-12
JITTER_MAX = 1e-6
# Below this the reference density is treated as underflowed.
RHO_FLOOR = 1e-280
_BLOCK = 10_000_000


@dataclass(frozen=True, eq=False)
class GPModel:
    grid: TensorGrid
    nodes: NDArray[np.float64]
    rho: NDArray[np.float64]
    K: NDArray[np.float64]
    factor: NDArray[np.float64]
    jitter: float

    @property
    def weight(self) -> float:
        return self.grid.weight

    def describe(self) -> dict:
        return {"grid": self.grid.describe(), "jitter": self.jitter}


def jitter_schedule(max_diag: float):
    """Relative jitters 1e-12, 2e-12, ... up to 1e-6, scaled by ``max_diag``."""
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-12):
        yield j * max_diag
        j *= 2.0


def build_gp(spec: MeasureSpec, sigma: float, grid: TensorGrid, jitter: float | None = None) -> GPModel:
    """Assemble the covariance matrix on the grid nodes and factor it.

    The factor satisfies ``factor @ factor.T = K + jitter * diag(rho / max(rho))``.
    With ``jitter=None`` the schedule from :func:`jitter_schedule` is tried in
    order and the first jitter that factorises is kept.
    """
    sigma = check_sigma(sigma)
    if grid.dim > MAX_GRID_DIM:
        raise ConfigError(f"grid-based limit simulation supports d <= {MAX_GRID_DIM}")
    if grid.dim != spec.dim:
        raise ConfigError("grid and reference differ in dimension")
    if jitter is not None and not jitter >= 0:
        raise ConfigError(f"jitter must be >= 0, got {jitter!r}")
    nodes = grid.nodes
    rho = np.exp(spec.log_smoothed(sigma, nodes))
    if np.any(rho <= RHO_FLOOR):
        raise NumericalError("reference density underflows on the grid; use a smaller box")
    K = covariance_matrix(spec, sigma, nodes)
    max_diag = float(np.max(np.diag(K)))
    g = K.shape[0]
    if max_diag <= VARIANCE_TOLERANCE * float(rho.max()) ** 2:
        # Degenerate P: the covariance is roundoff.
        return GPModel(grid, nodes, rho, K, np.zeros_like(K), 0.0)
    # Jitter is spread in proportion to rho so that it stays negligible in the
    # chi^2 functional, which divides by rho.
    profile = rho / rho.max()
    candidates = [jitter] if jitter is not None else list(jitter_schedule(max_diag))
    for j in candidates:
        try:
            factor = np.linalg.cholesky(K + np.diag(j * profile))
        except np.linalg.LinAlgError:
            continue
        logger.info("factorised %d-node covariance with jitter %.3g (%.3g relative)", g, j, j / max_diag)
        return GPModel(grid, nodes, rho, K, factor, float(j))
    raise NumericalError(f"covariance factorisation failed up to jitter {candidates[-1]:.3g}")


def gp_draw(model: GPModel, seed: int) -> NDArray[np.float64]:
    """One field realisation on the grid nodes."""
    z = np.random.default_rng(seed).standard_normal(model.factor.shape[0])
    return model.factor @ z


def gp_sample(model: GPModel, size: int, seed: int) -> NDArray[np.float64]:
    """``size`` independent realisations, one per row."""
    z = np.random.default_rng(seed).standard_normal((size, model.factor.shape[0]))
    return z @ model.factor.T


def tv_functional(fields: NDArray, weight: float) -> NDArray[np.float64]:
    return 0.5 * weight * np.abs(fields).sum(axis=-1)


def chi2_functional(fields: NDArray, weight: float, rho: NDArray) -> NDArray[np.float64]:
    return weight * (fields * fields / rho).sum(axis=-1)


def limit_tv_draw(model: GPModel, seed: int) -> float:
    """One draw of 1/2 * integral |B|."""
    return float(tv_functional(gp_draw(model, seed), model.weight))


def limit_chi2_draw(model: GPModel, seed: int) -> float:
    """One draw of integral B^2 / (P * phi_sigma)."""
    return float(chi2_functional(gp_draw(model, seed), model.weight, model.rho))


def limit_means(model: GPModel) -> tuple[float, float]:
    """Exact means of the discretised TV and chi^2 functionals.

    Each node value is centered normal with variance ``diag(factor @ factor.T)``,
    and E|Z| = sqrt(2 / pi) * sd.
    """
    var = np.einsum("ij,ij->i", model.factor, model.factor)
    tv = 0.5 * model.weight * math.sqrt(2.0 / math.pi) * float(np.sum(np.sqrt(var)))
    chi = model.weight * float(np.sum(var / model.rho))
    return tv, chi


def limit_samples(model: GPModel, size: int, seed: int) -> tuple[NDArray, NDArray]:
    """Paired TV and chi^2 limit draws computed from the same fields."""
    g = model.factor.shape[0]
    rng = np.random.default_rng(seed)
    tv = np.empty(size)
    chi = np.empty(size)
    step = max(1, _BLOCK // max(g, 1))
    for start in range(0, size, step):
        rows = min(step, size - start)
        fields = rng.standard_normal((rows, g)) @ model.factor.T
        tv[start:start + rows] = tv_functional(fields, model.weight)
        chi[start:start + rows] = chi2_functional(fields, model.weight, model.rho)
    return tv, chi


# ---------------------------------------------------------------------------
# Multiplier construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MultiplierModel:
    spec: MeasureSpec
    sigma: float
    anchors: NDArray[np.float64]

    @property
    def m(self) -> int:
        return self.anchors.shape[0]

    def centered_features(self, x: ArrayLike) -> NDArray[np.float64]:
        """Matrix with rows phi_sigma(x - a_i) - P * phi_sigma(x), shape (m, k)."""
        pts, _ = _as_points(x, self.spec.dim)
        diffs = pts[None, :, :] - self.anchors[:, None, :]
        rho = np.exp(self.spec.log_smoothed(self.sigma, pts))
        return gaussian_density(diffs, self.sigma) - rho


def build_multiplier(spec: MeasureSpec, sigma: float, m: int, seed: int) -> MultiplierModel:
    sigma = check_sigma(sigma)
    if int(m) < 1:
        raise ConfigError("multiplier model needs m >= 1 anchors")
    return MultiplierModel(spec, sigma, sample(spec, int(m), seed).points)


def multiplier_draw(mm: MultiplierModel, x: ArrayLike, seed: int) -> NDArray[np.float64]:
    """One multiplier field at the points ``x``."""
    g = np.random.default_rng(seed).standard_normal(mm.m)
    return g @ mm.centered_features(x) / math.sqrt(mm.m)


def multiplier_sample(mm: MultiplierModel, x: ArrayLike, size: int, seed: int) -> NDArray[np.float64]:
    """``size`` multiplier fields at ``x``, one per row."""
    feats = mm.centered_features(x)
    g = np.random.default_rng(seed).standard_normal((size, mm.m))
    return g @ feats / math.sqrt(mm.m)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_limit_sample(path, values: ArrayLike, meta: dict) -> Path:
    """Write one value per line below a ``# {json metadata}`` header."""
    path = Path(path)
    lines = ["# " + json.dumps(meta, sort_keys=True)]
    lines += [format(float(v), ".17g") for v in np.asarray(values).reshape(-1)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_limit_sample(path) -> tuple[NDArray[np.float64], dict]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise ConfigError(f"{path}: missing metadata header")
    meta = json.loads(text[0][2:])
    values = np.array([float(line) for line in text[1:] if line.strip()])
    return values, meta
