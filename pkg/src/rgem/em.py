"""Regularized EM for Gaussian mixtures.

The M-step shrinks each cluster scatter toward a fixed target,
``Sigma_k = beta_k S_k + (1 - beta_k) T_k`` with
``beta_k = n_k / (eta_k + n_k)``, which maximizes the expected
complete-data log-likelihood minus ``eta_k KL(Sigma_k, T_k)``.  With
``mode="vanilla"`` the penalty is dropped and a tiny diagonal load keeps
the updates invertible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._seeding import derive_seed
from .errors import ClusterCollapse, EmptyCluster, NotPositiveDefinite
from .kmeans import kmeans_init
from .model import Dataset, GmmParams, PenaltyConfig, weighted_log_densities
from .shrinkage import CvConfig, cv_select_eta, default_eta_grid, make_target, scatter
from .spd import frobenius_dist, make_spd

log = logging.getLogger(__name__)

MIN_MASS = 1e-12
MAX_COLLAPSES = 3
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Responsibilities:
    """Row-stochastic (n, K) matrix of posterior cluster probabilities."""

    p: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        return self.p.sum(axis=0)

    def hard_labels(self) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest index
        return np.argmax(self.p, axis=1)


def _e_step(data: Dataset, params: GmmParams):
    logp = weighted_log_densities(data, params)
    lse = logsumexp(logp, axis=1)
    p = np.exp(logp - lse[:, None])
    p /= p.sum(axis=1, keepdims=True)
    return Responsibilities(p), float(lse.sum())


def e_step(data: Dataset, params: GmmParams) -> Responsibilities:
    """Posterior cluster probabilities under ``params`` (log-space softmax)."""
    return _e_step(data, params)[0]


def m_step(
    data: Dataset,
    resp: Responsibilities,
    pen: Optional[PenaltyConfig] = None,
    loading: float = 0.0,
) -> GmmParams:
    """Penalized M-step.

    Parameters
    ----------
    pen : PenaltyConfig, optional
        Strengths and targets. ``None`` means no shrinkage.
    loading : float
        Relative diagonal load ``loading * max(tr(S_k)/m, tiny)`` added to
        each covariance; the vanilla baseline uses it, the penalized
        update does not need it.

    Raises
    ------
    EmptyCluster
        If a component's total responsibility is below ``MIN_MASS``.
    NotPositiveDefinite
        If an unshrunk update is singular. ``exc.cluster`` names the component.
    """
    p = resp.p
    n, m = data.n, data.m
    masses = p.sum(axis=0)
    for k, mass in enumerate(masses):
        if mass < MIN_MASS:
            raise EmptyCluster(k, mass)
    weights = masses / n
    means = (p.T @ data.x) / masses[:, None]
    covs = []
    for k in range(p.shape[1]):
        xc = data.x - means[k]
        s = (xc * (p[:, k] / masses[k])[:, None]).T @ xc
        if pen is not None and pen.etas[k] > 0:
            beta = masses[k] / (pen.etas[k] + masses[k])
            s = beta * s + (1.0 - beta) * pen.targets[k].entries
        if loading > 0:
            s = s + loading * max(np.trace(s) / m, _TINY) * np.eye(m)
        try:
            covs.append(make_spd(s))
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(str(exc), cluster=k) from None
    return GmmParams(weights, means, covs)


@dataclass(frozen=True)
class FitConfig:
    k: int
    max_iter: int = 200
    tol: float = 1e-6
    cv_refresh_every: int = 20
    eta_grid: Optional[tuple] = None
    cv_folds: int = 5
    seed: int = 0
    mode: str = "regularized"
    loading: float = 1e-6
    store_covariances: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.max_iter < 1 or self.cv_refresh_every < 1:
            raise ValueError("max_iter and cv_refresh_every must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.mode not in ("regularized", "vanilla"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.loading < 0:
            raise ValueError("loading must be >= 0")
        if self.eta_grid is not None:
            grid = tuple(float(e) for e in self.eta_grid)
            if not grid or any(e < 0 or not np.isfinite(e) for e in grid):
                raise ValueError("eta_grid must be non-empty with finite values >= 0")
            object.__setattr__(self, "eta_grid", grid)


@dataclass
class TraceRecord:
    iteration: int
    penalized_loglik: float
    loglik: float
    etas: tuple
    # frob[j, k] = ||Sigma_j - reference_k||_F, when a reference is given
    frob: Optional[np.ndarray] = None
    covs: Optional[list] = None
    reseeded: bool = False


@dataclass
class FitReport:
    params: GmmParams
    resp: Responsibilities
    hard_labels: np.ndarray
    trace: list
    iterations_run: int
    converged: bool
    etas: np.ndarray
    targets: Optional[tuple]
    init_labels: np.ndarray
    init_params: GmmParams
    collapses: dict = field(default_factory=dict)

    def trace_array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.trace])


def select_etas(data, labels, targets, grid, folds, seed, fallback=None):
    """Cross-validated strength per cluster over its hard-assigned points.

    Clusters with fewer than two points keep ``fallback[k]`` (or the
    largest candidate when there is none).
    """
    etas = []
    for k, target in enumerate(targets):
        idx = np.flatnonzero(labels == k)
        if len(idx) < 2:
            etas.append(max(grid) if fallback is None else fallback[k])
            continue
        cfg = CvConfig(folds=min(folds, len(idx)), eta_grid=grid, seed=seed)
        etas.append(cv_select_eta(data, idx, target, cfg))
    return np.array(etas, dtype=float)


class _Collapse:
    def __init__(self):
        self.counts = {}

    def hit(self, k):
        self.counts[k] = self.counts.get(k, 0) + 1
        if self.counts[k] >= MAX_COLLAPSES:
            raise ClusterCollapse(f"cluster {k} collapsed {self.counts[k]} times")


def _reseed(data, params, resp, k, fallback_cov):
    i = int(np.argmin(resp.p.max(axis=1)))
    weights = params.weights.copy()
    weights[k] = max(weights[k], 1.0 / data.n)
    means = params.means.copy()
    means[k] = data.x[i]
    covs = list(params.covs)
    covs[k] = fallback_cov
    log.debug("re-seeding cluster %d at observation %d", k, i)
    return GmmParams(weights / weights.sum(), means, covs)


def fit(data: Dataset, cfg: FitConfig, reference=None, init=None) -> FitReport:
    """Run (regularized or vanilla) EM from a k-means start.

    Parameters
    ----------
    reference : sequence of (m, m) arrays, optional
        Covariances to measure every iterate against; fills ``TraceRecord.frob``.
    init : (labels, GmmParams), optional
        Replaces the k-means initialization.
    """
    k = cfg.k
    if data.n <= k:
        raise ValueError(f"need more than {k} observations, got {data.n}")
    if init is None:
        init = kmeans_init(data, k, derive_seed(cfg.seed, 0))
    init_labels, params = init
    init_params = params
    refs = None if reference is None else [np.asarray(r, dtype=float) for r in reference]

    regularized = cfg.mode == "regularized"
    grid = cfg.eta_grid if cfg.eta_grid is not None else default_eta_grid(data.n)
    if regularized:
        targets = tuple(make_target(c) for c in params.covs)
        etas = select_etas(data, init_labels, targets, grid, cfg.cv_folds,
                           derive_seed(cfg.seed, 1, 0))
        loading = 0.0
        fallback = targets
    else:
        targets = None
        etas = np.zeros(k)
        loading = cfg.loading
        s = scatter(data.x)
        s = s + cfg.loading * max(np.trace(s) / data.m, _TINY) * np.eye(data.m)
        fallback = [make_spd(s)] * k

    def penalty_config():
        return PenaltyConfig(etas, targets) if regularized else None

    def record(t, params, ll, reseeded=False):
        pen = penalty_config()
        pll = ll - (pen.penalty(params) if pen is not None else 0.0)
        frob = None
        if refs is not None:
            frob = np.array([[frobenius_dist(c.entries, r) for r in refs] for c in params.covs])
        covs = [c.entries for c in params.covs] if cfg.store_covariances else None
        trace.append(TraceRecord(t, pll, ll, tuple(etas), frob, covs, reseeded))
        return pll

    collapse = _Collapse()
    trace = []
    resp, ll = _e_step(data, params)
    prev = record(0, params, ll)
    converged = False
    t = 0
    refreshes = 0
    eta_changed = False
    for t in range(1, cfg.max_iter + 1):
        reseeded = False
        while True:
            try:
                new = m_step(data, resp, penalty_config(), loading)
                break
            except (EmptyCluster, NotPositiveDefinite) as exc:
                bad = exc.cluster
                if bad is None:
                    raise
                collapse.hit(bad)
                params = _reseed(data, params, resp, bad, fallback[bad])
                resp = e_step(data, params)
                reseeded = True
        params = new
        resp, ll = _e_step(data, params)
        cur = record(t, params, ll, reseeded)
        if not eta_changed and not reseeded and abs(cur - prev) / (1.0 + abs(prev)) < cfg.tol:
            converged = True
            break
        prev = cur
        eta_changed = False
        if regularized and t % cfg.cv_refresh_every == 0 and t < cfg.max_iter:
            refreshes += 1
            new_etas = select_etas(data, resp.hard_labels(), targets, grid, cfg.cv_folds,
                                   derive_seed(cfg.seed, 1, refreshes), fallback=etas)
            eta_changed = not np.array_equal(new_etas, etas)
            etas = new_etas

    return FitReport(
        params=params,
        resp=resp,
        hard_labels=resp.hard_labels(),
        trace=trace,
        iterations_run=t,
        converged=converged,
        etas=np.asarray(etas, dtype=float),
        targets=targets,
        init_labels=np.asarray(init_labels),
        init_params=init_params,
        collapses=dict(collapse.counts),
    )
