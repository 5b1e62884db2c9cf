"""Clustering of LIE features into trees and human-made objects.

A Gaussian mixture is fit by expectation-maximisation; k-means is provided
as the simpler alternative.  Both operate on a canonical (lexicographically
sorted) copy of the data before seeding, so results depend only on the set
of feature rows and the seed, not on row order.

Components are mapped to semantic labels by the mean of the v column: the
lowest-mean component is trees, the rest are human-made (with K = 3, the two
upper components become two human-made subclasses).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .cloud import Label
from .errors import DegenerateFeatures, TooFewPoints

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray  # (rows, d)
    indices: np.ndarray  # cloud row of each feature row
    columns: tuple[str, ...] = ("v",)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        if len(self.columns) != data.shape[1] or len(self.indices) != data.shape[0]:
            raise ValueError("feature matrix shape does not match its columns/indices")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Standardization:
    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "mean": self.mean.tolist(),
                "std": self.std.tolist(), "dropped": list(self.dropped)}


def standardize(features: FeatureMatrix) -> tuple[FeatureMatrix, Standardization]:
    """Zero-mean, unit-variance columns (population variance); constant columns dropped."""
    x = features.data
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    keep = np.ptp(x, axis=0) > 0  # exact test; a constant column's std may be round-off
    if not keep.any():
        raise DegenerateFeatures("every feature column is constant")
    dropped = tuple(c for c, k in zip(features.columns, keep) if not k)
    if dropped:
        log.warning("dropping constant feature column(s): %s", ", ".join(dropped))
    cols = tuple(c for c, k in zip(features.columns, keep) if k)
    z = (x[:, keep] - mean[keep]) / std[keep]
    return (FeatureMatrix(z, features.indices, cols),
            Standardization(cols, mean[keep], std[keep], dropped))


# GMM ------------------------------------------------------------------------------


@dataclass(frozen=True)
class GmmConfig:
    max_iter: int = 200
    rel_tol: float = 1e-8
    floor_scale: float = 1e-6
    restarts: int = 5


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)
    loglik: list = field(default_factory=list)
    floor: float = 0.0
    converged: bool = False
    columns: tuple[str, ...] = ("v",)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def iterations(self) -> int:
        """EM updates performed (the first loglik entry is the initial state)."""
        return max(len(self.loglik) - 1, 0)

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """(rows, K) log of weight_k * N(x | mean_k, cov_k)."""
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        d = x.shape[1]
        out = np.empty((x.shape[0], self.K))
        for k in range(self.K):
            chol = np.linalg.cholesky(self.covariances[k])
            diff = np.linalg.solve(chol, (x - self.means[k]).T)
            maha = np.sum(diff * diff, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            out[:, k] = np.log(self.weights[k]) - 0.5 * (d * _LOG_2PI + logdet + maha)
        return out

    def responsibilities(self, x) -> np.ndarray:
        lp = self.component_log_density(x)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def score(self, x) -> float:
        return float(np.sum(logsumexp(self.component_log_density(x), axis=1)))

    def to_dict(self) -> dict:
        return {"K": self.K, "weights": self.weights.tolist(), "means": self.means.tolist(),
                "covariances": self.covariances.tolist(), "loglik": self.loglik[-1] if self.loglik else None,
                "loglik_trace": list(self.loglik),
                "iterations": self.iterations, "converged": self.converged, "columns": list(self.columns)}


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # hard component index per row
    responsibilities: np.ndarray  # (rows, K)


def _canonical(x: np.ndarray) -> np.ndarray:
    """Row permutation that sorts ``x`` lexicographically."""
    return np.lexsort(x.T[::-1])


def _kmeanspp(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centers.append(x[pick])
        d2 = np.minimum(d2, np.sum((x - x[pick]) ** 2, axis=1))
    return np.array(centers)


def _floor_cov(cov: np.ndarray, floor: float) -> np.ndarray:
    w, vecs = np.linalg.eigh(cov)
    if w.min() >= floor:
        return cov
    w = np.maximum(w, floor)
    out = (vecs * w) @ vecs.T
    return 0.5 * (out + out.T)


def _m_step(x, resp, floor):
    n, d = x.shape
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, 10 * np.finfo(float).eps * n)
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        diff = x - means[k]
        covs[k] = _floor_cov((resp[:, k, None] * diff).T @ diff / nk[k], floor)
    return weights, means, covs


def _em(x, k, rng, cfg: GmmConfig, floor: float) -> GmmModel:
    d = x.shape[1]
    seeds = _kmeanspp(x, k, rng)
    global_cov = _floor_cov(np.atleast_2d(np.cov(x.T, bias=True)).reshape(d, d), floor)
    model = GmmModel(np.full(k, 1.0 / k), seeds.copy(), np.repeat(global_cov[None], k, axis=0),
                     floor=floor)
    for _ in range(cfg.max_iter):
        lp = model.component_log_density(x)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(norm.sum())
        resp = np.exp(lp - norm)
        prev = model.loglik[-1] if model.loglik else None
        model.loglik.append(ll)
        if prev is not None and abs(ll - prev) <= cfg.rel_tol * abs(ll):
            model.converged = True
            break
        model.weights, model.means, model.covariances = _m_step(x, resp, floor)
    return model


def covariance_floor(x: np.ndarray, scale: float = 1e-6) -> float:
    """``scale`` times the smallest variance among non-constant columns.

    Constancy is decided exactly (peak-to-peak zero) so that round-off in the
    variance of a constant column does not produce a vanishing floor.
    """
    varying = np.ptp(x, axis=0) > 0
    if not varying.any():
        return scale
    return scale * float(x[:, varying].var(axis=0).min())


def fit_gmm(features, K: int = 2, seed: int = 0, config: GmmConfig = GmmConfig()) -> GmmModel:
    """EM fit of a K-component Gaussian mixture; best of ``config.restarts`` runs."""
    fm = features if isinstance(features, FeatureMatrix) else None
    x = fm.data if fm else np.asarray(features, dtype=float).reshape(len(features), -1)
    if K < 1:
        raise ValueError("K must be positive")
    if x.shape[0] < K:
        raise TooFewPoints(f"{x.shape[0]} feature rows cannot support {K} components")
    x = x[_canonical(x)]
    floor = covariance_floor(x, config.floor_scale)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, config.restarts)):
        model = _em(x, K, rng, config, floor)
        if best is None or model.loglik[-1] > best.loglik[-1]:
            best = model
    if fm is not None:
        best.columns = fm.columns
    return best


def predict(model: GmmModel, features) -> ClusterAssignment:
    x = features.data if isinstance(features, FeatureMatrix) else np.asarray(features, float).reshape(len(features), -1)
    resp = model.responsibilities(x)
    # argmax returns the first maximum, i.e. ties go to the lowest index
    return ClusterAssignment(np.argmax(resp, axis=1), resp)


# k-means --------------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansConfig:
    max_iter: int = 300
    restarts: int = 1


@dataclass(frozen=True)
class KMeansResult:
    assignment: ClusterAssignment
    centroids: np.ndarray
    inertia: tuple


def kmeans(features, K: int = 2, seed: int = 0, config: KMeansConfig = KMeansConfig()) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    Empty clusters keep their previous centroid.  Responsibilities in the
    returned assignment are one-hot.
    """
    x = features.data if isinstance(features, FeatureMatrix) else np.asarray(features, float).reshape(len(features), -1)
    if x.shape[0] < K:
        raise TooFewPoints(f"{x.shape[0]} rows cannot support {K} clusters")
    order = _canonical(x)
    xc = x[order]
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, config.restarts)):
        centroids = _kmeanspp(xc, K, rng)
        labels = None
        inertia = []
        for _ in range(config.max_iter):
            d2 = ((xc[:, None, :] - centroids[None]) ** 2).sum(axis=2)
            new = np.argmin(d2, axis=1)
            inertia.append(float(d2[np.arange(len(xc)), new].sum()))
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for k in range(K):
                members = xc[labels == k]
                if len(members):
                    centroids[k] = members.mean(axis=0)
        if best is None or inertia[-1] < best[2][-1]:
            best = (labels.copy(), centroids.copy(), inertia)
    labels_c, centroids, inertia = best
    labels = np.empty_like(labels_c)
    labels[order] = labels_c
    onehot = np.eye(K)[labels]
    return KMeansResult(ClusterAssignment(labels, onehot), centroids, tuple(inertia))


# semantic labels ---------------------------------------------------------------


def component_label_map(v_means: Sequence[float]) -> dict[int, Label]:
    """Map component index -> semantic label by ascending mean of v."""
    v_means = np.asarray(v_means, dtype=float)
    k = len(v_means)
    order = np.argsort(v_means, kind="stable")  # ties keep lower index first
    mapping = {int(order[0]): Label.TREE}
    if k == 1:
        return mapping
    if k == 2:
        mapping[int(order[1])] = Label.HUMAN_MADE
    elif k == 3:
        mapping[int(order[1])] = Label.HUMAN_MADE_1
        mapping[int(order[2])] = Label.HUMAN_MADE_2
    else:
        raise ValueError("label mapping supports K in {1, 2, 3}")
    return mapping


def assign_labels(model: GmmModel, features, v_column: int = 0) -> np.ndarray:
    """Semantic label code for each feature row."""
    mapping = component_label_map(model.means[:, v_column])
    hard = predict(model, features).labels
    lut = np.array([mapping[k] for k in range(model.K)], dtype=np.int8)
    return lut[hard]


def propagate_to_invalid(xyz: np.ndarray, labelled: np.ndarray, labels: np.ndarray,
                         unlabelled: np.ndarray) -> np.ndarray:
    """Labels for ``unlabelled`` rows copied from their nearest ``labelled`` row (3D)."""
    from scipy.spatial import cKDTree

    if len(unlabelled) == 0:
        return np.empty(0, dtype=np.int8)
    if len(labelled) == 0:
        raise DegenerateFeatures("no valid features to propagate labels from")
    tree = cKDTree(xyz[labelled])
    _, nearest = tree.query(xyz[unlabelled], k=1)
    return np.asarray(labels)[nearest]
