"""Local information extraction: kernel Hessian features for nonground points.

The intensity of the nonground point field is smoothed with an anisotropic
Gaussian kernel.  At each nonground point the Hessian of that smoothed
intensity is estimated in closed form, its eigenvalues are sorted by absolute
value, and the point gets the feature

    v = -log(l1^2 / (l1^2 + l2^2 + l3^2))

where ``l1`` is the eigenvalue of least magnitude.  Points on planar
surfaces have one near-zero curvature direction (large v); points inside
volumetric clutter such as tree crowns have comparable curvatures in all
directions (v near its floor of log 3).

Two summation modes exist.  ``exact`` sums over every point.  ``grid`` uses a
uniform spatial hash and drops kernel terms farther than
``truncation * max(h)`` from the probe, which is what makes large clouds
tractable.  The radius is at least ``truncation`` standard deviations along
every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import IndexSet, PointCloud

V_MAX = 50.0
SCALE_FLOOR = 1e-30
DEFAULT_TRUNCATION = 5.0

_NORM = (2.0 * math.pi) ** 1.5
# block size (probes x points) for vectorised kernel sums
_BLOCK = 1 << 21


@dataclass(frozen=True)
class Bandwidth:
    """Per-axis Gaussian kernel bandwidths in feet.

    Use :meth:`paired` for the usual tied horizontal bandwidth; the plain
    constructor accepts independent ``hx`` and ``hy``.
    """

    hx: float
    hy: float
    hz: float

    def __post_init__(self):
        for name in ("hx", "hy", "hz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"bandwidth {name} must be positive and finite, got {value}")

    @classmethod
    def paired(cls, horizontal: float, vertical: float) -> "Bandwidth":
        return cls(horizontal, horizontal, vertical)

    @classmethod
    def default(cls) -> "Bandwidth":
        return cls.paired(5.0, 8.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.hx, self.hy, self.hz])

    @property
    def max(self) -> float:
        return max(self.hx, self.hy, self.hz)


@dataclass(frozen=True)
class HessianEstimate:
    xx: float
    xy: float
    xz: float
    yy: float
    yz: float
    zz: float

    @classmethod
    def from_array(cls, upper) -> "HessianEstimate":
        return cls(*(float(v) for v in upper))

    def upper(self) -> np.ndarray:
        return np.array([self.xx, self.xy, self.xz, self.yy, self.yz, self.zz])

    def matrix(self) -> np.ndarray:
        return upper_to_matrix(self.upper())


@dataclass(frozen=True)
class EigenTriple:
    l1: float
    l2: float
    l3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.l1, self.l2, self.l3])


@dataclass(frozen=True)
class LieFeature:
    v: float
    valid: bool


def upper_to_matrix(upper: np.ndarray) -> np.ndarray:
    """(..., 6) upper-triangle entries -> (..., 3, 3) symmetric matrices."""
    upper = np.asarray(upper, dtype=float)
    xx, xy, xz, yy, yz, zz = np.moveaxis(upper, -1, 0)
    return np.stack([np.stack([xx, xy, xz], -1),
                     np.stack([xy, yy, yz], -1),
                     np.stack([xz, yz, zz], -1)], -2)


# kernel -------------------------------------------------------------------------


def kernel_value(delta, h: Bandwidth):
    """Gaussian kernel at displacement(s) ``delta`` (shape (3,) or (m, 3))."""
    d = np.asarray(delta, dtype=float) / h.as_array()
    q = np.sum(d * d, axis=-1)
    return np.exp(-0.5 * q) / (_NORM * h.hx * h.hy * h.hz)


def _block_sums(probes, pts, h: Bandwidth, order: int, cutoff: Optional[float]):
    """Kernel sums of ``pts`` around each probe.

    ``order`` 0 returns intensity, 1 adds the gradient, 2 adds the Hessian
    upper triangle.  With ``cutoff`` set, terms farther than ``cutoff`` (in
    cloud units) from the probe are dropped.
    """
    hv = h.as_array()
    inv2 = 1.0 / (hv * hv)
    norm = 1.0 / (_NORM * h.hx * h.hy * h.hz)
    p = probes.shape[0]
    lam = np.zeros(p)
    grad = np.zeros((p, 3)) if order >= 1 else None
    hess = np.zeros((p, 6)) if order >= 2 else None
    if pts.shape[0] == 0 or p == 0:
        return lam, grad, hess
    step = max(1, _BLOCK // pts.shape[0])
    for s in range(0, p, step):
        d = pts[None, :, :] - probes[s:s + step, None, :]  # (b, m, 3)
        u = d * inv2  # derivative factors (x_i - x) / h^2
        q = np.einsum("bmk,bmk->bm", d, u)
        k = np.exp(-0.5 * q) * norm
        if cutoff is not None:
            k[np.einsum("bmk,bmk->bm", d, d) > cutoff * cutoff] = 0.0
        lam[s:s + step] = k.sum(axis=1)
        if order >= 1:
            grad[s:s + step] = np.einsum("bm,bmk->bk", k, u)
        if order >= 2:
            ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
            hess[s:s + step] = np.stack([
                (k * (ux * ux - inv2[0])).sum(axis=1),
                (k * (ux * uy)).sum(axis=1),
                (k * (ux * uz)).sum(axis=1),
                (k * (uy * uy - inv2[1])).sum(axis=1),
                (k * (uy * uz)).sum(axis=1),
                (k * (uz * uz - inv2[2])).sum(axis=1),
            ], axis=1)
    return lam, grad, hess


# spatial index -------------------------------------------------------------------


class GridIndex:
    """Uniform hash of points into cubic cells of edge ``cell``.

    Immutable after construction.  ``query`` returns a superset of the
    points within Euclidean distance ``r`` of ``p``.
    """

    def __init__(self, xyz: np.ndarray, indices: np.ndarray, cell: float):
        if not cell > 0:
            raise ValueError("grid cell size must be positive")
        self.cell = float(cell)
        self.xyz = np.asarray(xyz, dtype=float)
        self.indices = np.asarray(indices, dtype=np.int64)
        keys = np.floor(self.xyz[self.indices] / self.cell).astype(np.int64)
        order = np.lexsort(keys.T[::-1])
        keys = keys[order]
        sorted_idx = self.indices[order]
        bounds = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(keys)]])
        self.cells = {tuple(keys[a].tolist()): sorted_idx[a:b]
                      for a, b in zip(starts, ends) if b > a}

    def key(self, p) -> tuple:
        return tuple(np.floor(np.asarray(p, dtype=float) / self.cell).astype(np.int64).tolist())

    def neighbourhood(self, key, reach: int = 1) -> np.ndarray:
        """Indices in all cells within ``reach`` cells of ``key``, in cell-key order."""
        i, j, k = key
        parts = []
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for dk in range(-reach, reach + 1):
                    members = self.cells.get((i + di, j + dj, k + dk))
                    if members is not None:
                        parts.append(members)
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def query(self, p, r: float) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        lo = np.floor((p - r) / self.cell).astype(np.int64)
        hi = np.floor((p + r) / self.cell).astype(np.int64)
        parts = []
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    members = self.cells.get((i, j, k))
                    if members is not None:
                        parts.append(members)
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def build_grid_index(cloud: PointCloud, index_set, cell: float) -> GridIndex:
    if not isinstance(index_set, IndexSet):
        index_set = IndexSet(index_set)
    index_set.check(cloud.n)
    return GridIndex(cloud.xyz, index_set.indices, cell)


# estimators --------------------------------------------------------------------------


class KernelField:
    """Kernel-smoothed intensity of a point set, evaluable at arbitrary probes.

    The point set is stored in a canonical (lexicographic coordinate) order so
    that sums do not depend on the order in which points were supplied.
    """

    def __init__(self, xyz, h: Bandwidth, mode: str = "exact",
                 truncation: float = DEFAULT_TRUNCATION):
        if mode not in ("exact", "grid"):
            raise ValueError(f"mode must be 'exact' or 'grid', got {mode!r}")
        if not truncation > 0:
            raise ValueError("truncation must be positive")
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        if xyz.shape[0] == 0:
            raise ValueError("kernel field needs at least one point")
        order = np.lexsort(xyz.T[::-1])
        self.pts = np.ascontiguousarray(xyz[order])
        self.h = h
        self.mode = mode
        self.truncation = float(truncation)
        self.radius = self.truncation * h.max
        self.grid = GridIndex(self.pts, np.arange(len(self.pts)), self.radius) if mode == "grid" else None

    def evaluate(self, probes, order: int = 2):
        probes = np.asarray(probes, dtype=float).reshape(-1, 3)
        if self.grid is None:
            return _block_sums(probes, self.pts, self.h, order, None)
        p = probes.shape[0]
        lam = np.zeros(p)
        grad = np.zeros((p, 3)) if order >= 1 else None
        hess = np.zeros((p, 6)) if order >= 2 else None
        keys = np.floor(probes / self.grid.cell).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for g, key in enumerate(uniq):
            rows = np.flatnonzero(inverse == g)
            cand = self.grid.neighbourhood(tuple(key.tolist()))
            l, gr, he = _block_sums(probes[rows], self.pts[cand], self.h, order, self.radius)
            lam[rows] = l
            if order >= 1:
                grad[rows] = gr
            if order >= 2:
                hess[rows] = he
        return lam, grad, hess

    def intensity(self, probes):
        return self.evaluate(probes, 0)[0]

    def gradient(self, probes):
        return self.evaluate(probes, 1)[1]

    def hessian(self, probes):
        return self.evaluate(probes, 2)[2]


def _field(cloud: PointCloud, index_set, h, mode, truncation) -> KernelField:
    if not isinstance(index_set, IndexSet):
        index_set = IndexSet(index_set)
    index_set.check(cloud.n)
    if len(index_set) == 0:
        raise ValueError("kernel sums need a nonempty point set")
    return KernelField(cloud.xyz[index_set.indices], h, mode, truncation)


def estimate_intensity(cloud, index_set, p, h: Bandwidth, mode="exact",
                       truncation=DEFAULT_TRUNCATION) -> float:
    return float(_field(cloud, index_set, h, mode, truncation).intensity(p)[0])


def estimate_gradient(cloud, index_set, p, h: Bandwidth, mode="exact",
                      truncation=DEFAULT_TRUNCATION) -> np.ndarray:
    return _field(cloud, index_set, h, mode, truncation).gradient(p)[0]


def estimate_hessian(cloud, index_set, p, h: Bandwidth, mode="exact",
                     truncation=DEFAULT_TRUNCATION) -> HessianEstimate:
    return HessianEstimate.from_array(_field(cloud, index_set, h, mode, truncation).hessian(p)[0])


# eigenvalues ---------------------------------------------------------------------------

_PAIRS = ((0, 1), (0, 2), (1, 2))


def jacobi_eigvals(mats, max_sweeps: int = 30) -> np.ndarray:
    """Eigenvalues of a batch of symmetric 3x3 matrices by cyclic Jacobi.

    Returns an ``(N, 3)`` array, unsorted (diagonal order after convergence).
    """
    a = np.array(mats, dtype=float).reshape(-1, 3, 3)
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    with np.errstate(over="ignore", invalid="ignore"):
        a = _jacobi_sweeps(a, scale, max_sweeps)
    return np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=1)


def _jacobi_sweeps(a, scale, max_sweeps):
    tiny = np.finfo(float).tiny
    eps = np.finfo(float).eps
    for _ in range(max_sweeps):
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        if np.all(off <= (eps * scale) ** 2 + tiny):
            break
        for p, q in _PAIRS:
            apq = a[:, p, q]
            active = np.abs(apq) > tiny
            denom = np.where(active, 2.0 * apq, 1.0)
            theta = (a[:, q, q] - a[:, p, p]) / denom
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.zeros_like(a)
            rot[:, 0, 0] = rot[:, 1, 1] = rot[:, 2, 2] = 1.0
            rot[:, p, p] = c
            rot[:, q, q] = c
            rot[:, p, q] = s
            rot[:, q, p] = -s
            a = np.swapaxes(rot, 1, 2) @ a @ rot
            a[:, p, q] = a[:, q, p] = 0.0
            a = 0.5 * (a + np.swapaxes(a, 1, 2))
    return a


def sort_by_magnitude(eigs: np.ndarray) -> np.ndarray:
    eigs = np.asarray(eigs, dtype=float)
    order = np.argsort(np.abs(eigs), axis=-1, kind="stable")
    return np.take_along_axis(eigs, order, axis=-1)


def eigvals_sym3_batch(upper) -> np.ndarray:
    """(N, 6) upper triangles -> (N, 3) eigenvalues in ascending |.| order."""
    return sort_by_magnitude(jacobi_eigvals(upper_to_matrix(np.asarray(upper).reshape(-1, 6))))


def eigvals_sym3(H) -> EigenTriple:
    if isinstance(H, HessianEstimate):
        mat = H.matrix()
    else:
        mat = np.asarray(H, dtype=float)
        if mat.shape == (6,):
            mat = upper_to_matrix(mat)
    return EigenTriple(*sort_by_magnitude(jacobi_eigvals(mat)[0]).tolist())


# feature -----------------------------------------------------------------------------------


def feature_values(eigs) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`feature_v` on an (N, 3) |.|-sorted eigenvalue array.

    Returns ``(v, valid)``; invalid rows carry NaN.
    """
    eigs = np.asarray(eigs, dtype=float).reshape(-1, 3)
    sq = eigs * eigs
    total = sq.sum(axis=1)
    valid = total >= SCALE_FLOOR
    v = np.full(eigs.shape[0], np.nan)
    with np.errstate(divide="ignore"):
        raw = np.log(total[valid]) - np.log(sq[valid, 0])
    v[valid] = np.minimum(raw, V_MAX)
    return v, valid


def feature_v(eigs) -> LieFeature:
    arr = eigs.as_array() if isinstance(eigs, EigenTriple) else np.asarray(eigs, dtype=float)
    v, valid = feature_values(sort_by_magnitude(arr))
    return LieFeature(float(v[0]), bool(valid[0]))


@dataclass(frozen=True)
class LieFeatures:
    """Features for the nonground subset of a cloud.

    ``indices`` are cloud row indices; ``v`` and ``valid`` align with them.
    """

    indices: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    hessians: np.ndarray
    eigenvalues: np.ndarray

    def column(self, n: int) -> np.ndarray:
        """Length-``n`` array with v at feature rows and NaN elsewhere."""
        out = np.full(n, np.nan)
        out[self.indices[self.valid]] = self.v[self.valid]
        return out

    def __len__(self):
        return len(self.indices)

    def summary(self) -> dict:
        good = self.v[self.valid]
        qs = np.quantile(good, [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]).tolist() if good.size else []
        return {"count": int(len(self.indices)), "valid": int(self.valid.sum()),
                "v_quantiles": dict(zip(["min", "q10", "q25", "median", "q75", "q90", "max"], qs))}


def compute_features(cloud: PointCloud, nonground, h: Bandwidth = Bandwidth.default(),
                     mode: str = "grid", truncation: float = DEFAULT_TRUNCATION) -> LieFeatures:
    """Kernel Hessian feature at every nonground point.

    Each point's own kernel term is part of its sum.
    """
    if not isinstance(nonground, IndexSet):
        nonground = IndexSet(nonground)
    nonground.check(cloud.n)
    if len(nonground) == 0:
        raise ValueError("compute_features needs at least one nonground point")
    idx = nonground.indices
    field = KernelField(cloud.xyz[idx], h, mode, truncation)
    hess = field.hessian(cloud.xyz[idx])
    eigs = eigvals_sym3_batch(hess)
    v, valid = feature_values(eigs)
    return LieFeatures(idx, v, valid, hess, eigs)
