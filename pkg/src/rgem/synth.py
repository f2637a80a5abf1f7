"""Synthetic AR(1)-covariance mixtures and clustering metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._seeding import derive_seed
from .errors import InvalidParam, KMismatch, LengthMismatch
from .model import Dataset, GmmParams
from .spd import SpdMatrix, make_spd


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    m: int
    rho: tuple
    theta: tuple
    k: int = 3
    radius: float = 2.0
    weights: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho)
        theta = tuple(float(t) for t in self.theta)
        if len(rho) != self.k or len(theta) != self.k:
            raise InvalidParam("rho and theta need one entry per cluster")
        if any(abs(r) >= 1 for r in rho) or any(t <= 0 for t in theta):
            raise InvalidParam("need |rho| < 1 and theta > 0")
        w = np.full(self.k, 1.0 / self.k) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (self.k,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise InvalidParam(f"weights must be a point of the {self.k}-simplex")
        if self.n < 1 or self.m < 1:
            raise InvalidParam("n and m must be positive")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", tuple(float(v) for v in w))


def draw_scenario(n, m, k=3, seed=0, rho_range=(0.3, 0.9), theta_range=(0.5, 2.0),
                  radius=2.0, weights=None) -> ScenarioSpec:
    """Scenario with per-cluster AR coefficients and scales drawn uniformly."""
    rng = np.random.default_rng(derive_seed(seed, 2))
    rho = rng.uniform(*rho_range, size=k)
    theta = rng.uniform(*theta_range, size=k)
    return ScenarioSpec(n=n, m=m, rho=tuple(rho), theta=tuple(theta), k=k,
                        radius=radius, weights=weights, seed=seed)


def ar1_cov(m: int, theta: float, rho: float) -> SpdMatrix:
    """Toeplitz covariance ``theta * rho**|i-j|``."""
    if theta <= 0 or abs(rho) >= 1:
        raise InvalidParam(f"need theta > 0 and |rho| < 1, got theta={theta}, rho={rho}")
    lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    return make_spd(theta * float(rho) ** lag)


def sphere_means(k: int, m: int, radius: float, seed=0) -> np.ndarray:
    """``k`` points drawn uniformly on the sphere of given radius in R^m."""
    if m < 1:
        raise InvalidParam("m must be positive")
    rng = np.random.default_rng(seed)
    out = np.empty((k, m))
    for j in range(k):
        g = rng.standard_normal(m)
        while not np.linalg.norm(g) > 0:
            g = rng.standard_normal(m)
        out[j] = radius * g / np.linalg.norm(g)
    return out


def scenario_params(spec: ScenarioSpec) -> GmmParams:
    """Ground-truth mixture for ``spec`` (means depend on ``spec.seed``)."""
    means = sphere_means(spec.k, spec.m, spec.radius, derive_seed(spec.seed, 3))
    covs = [ar1_cov(spec.m, t, r) for t, r in zip(spec.theta, spec.rho)]
    return GmmParams(np.array(spec.weights), means, covs)


def sample_gmm(spec: ScenarioSpec) -> Dataset:
    """Draw ``spec.n`` labelled observations from the scenario's mixture."""
    truth = scenario_params(spec)
    rng = np.random.default_rng(derive_seed(spec.seed, 4))
    z = rng.choice(spec.k, size=spec.n, p=truth.weights)
    g = rng.standard_normal((spec.n, spec.m))
    x = np.empty((spec.n, spec.m))
    for j in range(spec.k):
        rows = z == j
        x[rows] = truth.means[j] + g[rows] @ truth.covs[j].chol.T
    return Dataset(x, z)


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Normalized mutual information, ``I(a; b) / max(H(a), H(b))``.

    Two single-cluster labelings score 1; one single-cluster labeling
    against a non-trivial one scores 0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    mi = ha + hb - _entropy(table.ravel())
    return float(min(max(mi / max(ha, hb), 0.0), 1.0))


def match_clusters(est: GmmParams, truth: GmmParams) -> tuple:
    """Permutation ``perm`` with ``est`` component ``perm[k]`` matched to truth ``k``.

    Minimizes the summed Euclidean distance between matched means by
    exhaustive search.
    """
    if est.k != truth.k or est.dim != truth.dim:
        raise KMismatch(f"cannot match K={est.k}, m={est.dim} against K={truth.k}, m={truth.dim}")
    d = np.linalg.norm(est.means[:, None, :] - truth.means[None, :, :], axis=2)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(est.k)):
        cost = sum(d[perm[j], j] for j in range(est.k))
        if cost < best_cost:
            best, best_cost = perm, cost
    return tuple(int(p) for p in best)
