"""Lloyd's algorithm with k-means++ seeding, used to initialize EM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData
from .model import Dataset, GmmParams
from .shrinkage import scatter


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    iterations: int
    converged: bool


def _sqdist(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _plusplus(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        i = rng.choice(n, p=d2 / d2.sum())
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(data: Dataset, k: int, seed=0, max_iter: int = 100) -> KMeansResult:
    x = data.x
    if k < 1:
        raise ValueError("k must be positive")
    if data.n < k or len(np.unique(x, axis=0)) < k:
        raise DegenerateData(f"fewer than {k} distinct observations")
    rng = np.random.default_rng(seed)
    centers = _plusplus(x, k, rng)
    labels = np.full(data.n, -1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sqdist(x, centers)
        new = np.argmin(d2, axis=1)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # steal the point worst served by its current center
                far = np.argmax(d2[np.arange(data.n), labels])
                centers[j] = x[far]
                labels[far] = j
    return KMeansResult(labels, centers, it, converged)


def params_from_labels(data: Dataset, labels, k: int) -> GmmParams:
    """Empirical proportions, means and diagonally loaded covariances."""
    m = data.m
    global_scale = np.trace(scatter(data.x)) / m
    weights, means, covs = [], [], []
    for j in range(k):
        xj = data.x[labels == j]
        s = scatter(xj)
        scale = np.trace(s) / m
        if scale <= 0:
            scale = global_scale if global_scale > 0 else 1.0
        weights.append(len(xj) / data.n)
        means.append(xj.mean(axis=0))
        covs.append(s + 1e-6 * scale * np.eye(m))
    w = np.array(weights)
    return GmmParams(w / w.sum(), np.array(means), covs)


def kmeans_init(data: Dataset, k: int, seed=0):
    """Hard labels and GMM parameters from one k-means run."""
    res = kmeans(data, k, seed)
    return res.labels, params_from_labels(data, res.labels, k)
