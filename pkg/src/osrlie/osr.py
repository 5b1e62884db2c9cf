"""One-sided regression (OSR) ground filtering.

Ground returns scatter around a central plane with Gaussian noise, while
nonground returns can only sit above it.  OSR therefore estimates the noise
variance from nonpositive residuals alone, flags points whose residual
exceeds ``sqrt(2 * phi * ln n)`` as nonground, refits the plane by least
squares on the remaining points and repeats until the flagged set stops
changing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import IndexSet, PointCloud
from .errors import DegenerateGroundSet, DomainError, RankDeficient, TooFewPoints

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlaneModel:
    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not all(math.isfinite(b) for b in self.as_array()):
            raise ValueError(f"non-finite plane coefficients {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2])

    def predict(self, x, y):
        return self.beta0 + self.beta1 * np.asarray(x) + self.beta2 * np.asarray(y)


@dataclass(frozen=True)
class OsrConfig:
    max_iter: int = 100
    beta_tol: float = 1e-10
    min_ground: int = 3

    def __post_init__(self):
        if self.max_iter < 1 or not self.beta_tol > 0 or self.min_ground < 3:
            raise ValueError(f"invalid OSR config {self}")


@dataclass(frozen=True)
class OsrFit:
    plane: PlaneModel
    phi: float
    nonground: IndexSet
    iterations: int
    converged: bool
    trace: tuple = field(default=())  # (phi_t, |A_t|) per iteration
    stop_reason: str = ""

    @property
    def roughness(self) -> float:
        """Terrain unevenness, the square root of ``phi``."""
        return math.sqrt(self.phi)

    def summary(self) -> dict:
        return {
            "beta": self.plane.as_array().tolist(),
            "phi": self.phi,
            "nonground_count": len(self.nonground),
            "iterations": self.iterations,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }


def _as_indices(cloud: PointCloud, index_set) -> np.ndarray:
    if index_set is None:
        return np.arange(cloud.n)
    if not isinstance(index_set, IndexSet):
        index_set = IndexSet(index_set)
    index_set.check(cloud.n)
    return index_set.indices


def fit_ols(cloud: PointCloud, index_set=None) -> PlaneModel:
    """Least-squares plane through the points in ``index_set`` (all if None).

    Solved by SVD on centred coordinates rather than by forming the normal
    equations explicitly.
    """
    idx = _as_indices(cloud, index_set)
    if idx.size < 3:
        raise TooFewPoints(f"need at least 3 points for a plane fit, got {idx.size}")
    pts = cloud.xyz[idx]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    mx, my = x.mean(), y.mean()
    design = np.column_stack([np.ones(idx.size), x - mx, y - my])
    coef, _, rank, sv = np.linalg.lstsq(design, z, rcond=None)
    if rank < 3 or sv[-1] <= sv[0] * 1e-12:
        raise RankDeficient("(x, y) positions are collinear; plane is not identifiable")
    b0c, b1, b2 = coef
    return PlaneModel(float(b0c - b1 * mx - b2 * my), float(b1), float(b2))


def residuals(plane: PlaneModel, cloud: PointCloud) -> np.ndarray:
    return cloud.z - plane.predict(cloud.x, cloud.y)


def update_phi(res) -> float:
    """Mean square of the nonpositive residuals."""
    res = np.asarray(res, dtype=float)
    below = res[res <= 0]
    if below.size == 0:
        raise DegenerateGroundSet("no nonpositive residuals to estimate phi from")
    return float(np.dot(below, below) / below.size)


def outlier_threshold(phi: float, n: int) -> float:
    return math.sqrt(2.0 * phi * math.log(n))


def detect_outliers(res, phi: float, n: int) -> IndexSet:
    if phi < 0 or n < 1:
        raise DomainError("phi must be >= 0 and n >= 1")
    res = np.asarray(res, dtype=float)
    return IndexSet(np.flatnonzero(res > outlier_threshold(phi, n)))


def osr_objective(plane: PlaneModel, phi: float, cloud: PointCloud, nonground) -> float:
    """OSR objective summed over the ground points.

    The coefficient on ``log(2*pi*phi)`` is deliberately 1 rather than the
    Gaussian 1/2.  Diagnostic only; :func:`run_osr` never evaluates it.
    """
    if not phi > 0:
        raise DomainError("phi must be positive")
    if not isinstance(nonground, IndexSet):
        nonground = IndexSet(nonground)
    keep = ~nonground.mask(cloud.n)
    e = residuals(plane, cloud)[keep]
    return float(np.sum(-math.log(2 * math.pi * phi) - e * e / (2 * phi)))


def _zero_tolerance(z: np.ndarray) -> float:
    # residuals this small are round-off of an exact fit
    return 1e-12 * max(1.0, float(np.max(np.abs(z))))


def run_osr(cloud: PointCloud, config: OsrConfig = OsrConfig()) -> OsrFit:
    n = cloud.n
    if n < config.min_ground:
        raise TooFewPoints(f"cloud has {n} points, fewer than min_ground={config.min_ground}")
    tol = _zero_tolerance(cloud.z)

    beta = fit_ols(cloud)
    flagged = IndexSet()
    trace = []
    converged, reason = False, "max_iter"
    for t in range(1, config.max_iter + 1):
        e = residuals(beta, cloud)
        e[np.abs(e) <= tol] = 0.0
        phi = update_phi(e)
        new_flagged = detect_outliers(e, phi, n)
        trace.append((phi, len(new_flagged)))
        if n - len(new_flagged) < config.min_ground:
            raise DegenerateGroundSet(
                f"iteration {t}: only {n - len(new_flagged)} ground points left "
                f"(min_ground={config.min_ground})")
        # A(0) is empty, so equality also covers a clean first iteration
        if new_flagged == flagged:
            converged, reason = True, "set_fixpoint"
            flagged = new_flagged
            break
        flagged = new_flagged
        new_beta = fit_ols(cloud, flagged.complement(n))
        step = float(np.max(np.abs(new_beta.as_array() - beta.as_array())))
        beta = new_beta
        if step < config.beta_tol:
            converged, reason = True, "beta_tol"
            break
    log.debug("OSR stopped after %d iterations (%s)", t, reason)
    return OsrFit(beta, phi, flagged, t, converged, tuple(trace), reason)


def run_two_sided(cloud: PointCloud) -> PlaneModel:
    """Ordinary least squares on every point, the classical baseline."""
    return fit_ols(cloud)
