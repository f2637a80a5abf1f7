"""Shrinkage targets and cross-validated choice of the penalty strength.

For one cluster, each candidate strength is scored by the Gaussian
negative log-likelihood of held-out scatter under the shrunk training
covariance, summed over folds; the minimizer wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite
from .model import Dataset
from .spd import SpdMatrix, log_det, make_spd, solve_trace


@dataclass(frozen=True)
class CvConfig:
    folds: int = 5
    eta_grid: tuple = (0.0,)
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eta_grid)
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if not grid or any(not np.isfinite(e) or e < 0 for e in grid):
            raise ValueError(f"eta_grid must be non-empty, finite and >= 0: {grid}")
        object.__setattr__(self, "eta_grid", grid)


def make_target(sigma0: SpdMatrix) -> SpdMatrix:
    """Scaled identity with the same average eigenvalue as ``sigma0``."""
    m = sigma0.dim
    return make_spd(np.trace(sigma0.entries) / m * np.eye(m))


def scatter(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) scatter matrix of the rows of ``x`` about their mean."""
    xc = x - x.mean(axis=0)
    return xc.T @ xc / x.shape[0]


def split_folds(idx, folds: int, seed) -> list:
    """Random balanced partition of ``idx`` into ``folds`` parts."""
    idx = np.asarray(idx)
    perm = np.random.default_rng(seed).permutation(len(idx))
    return [np.sort(idx[p]) for p in np.array_split(perm, folds)]


def cv_errors(data: Dataset, cluster_idx, target: SpdMatrix, cfg: CvConfig) -> np.ndarray:
    """Summed held-out error for each candidate in ``cfg.eta_grid``.

    A candidate whose shrunk covariance is not positive definite in some
    fold (only possible for zero strength) scores ``+inf``.
    """
    cluster_idx = np.asarray(cluster_idx)
    if len(cluster_idx) < cfg.folds:
        raise ValueError(f"{len(cluster_idx)} points cannot fill {cfg.folds} folds")
    if target.dim != data.m:
        raise ValueError("target dimension does not match data")
    grid = np.asarray(cfg.eta_grid)
    err = np.zeros(len(grid))
    parts = split_folds(cluster_idx, cfg.folds, cfg.seed)
    for l, val in enumerate(parts):
        tr = np.concatenate([p for j, p in enumerate(parts) if j != l])
        s_val = scatter(data.x[val])
        s_tr = scatter(data.x[tr])
        n_tr = len(tr)
        for j, eta in enumerate(grid):
            if not np.isfinite(err[j]):
                continue
            blend = n_tr / (eta + n_tr) * s_tr + eta / (eta + n_tr) * target.entries
            try:
                sig = make_spd(blend)
            except NotPositiveDefinite:
                err[j] = np.inf
                continue
            err[j] += solve_trace(sig, s_val) + log_det(sig)
    return err


def cv_select_eta(data: Dataset, cluster_idx, target: SpdMatrix, cfg: CvConfig) -> float:
    """Grid candidate with the smallest cross-validated error.

    Ties go to the smaller strength.
    """
    grid = np.asarray(cfg.eta_grid)
    err = cv_errors(data, cluster_idx, target, cfg)
    best = None
    for j in np.argsort(grid, kind="stable"):
        if best is None or err[j] < err[best]:
            best = j
    return float(grid[best])


def default_eta_grid(n: int, num: int = 20) -> tuple:
    """``{0}`` plus ``num`` log-spaced values from ``n/100`` to ``100 n``."""
    return (0.0,) + tuple(float(v) for v in np.logspace(-2, 2, num) * n)
