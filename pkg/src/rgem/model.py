"""GMM parameters, datasets and the (penalized) log-likelihood."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .spd import SpdMatrix, kl_penalty, log_det, make_spd, solve_quad

LOG_2PI = float(np.log(2.0 * np.pi))
# components lighter than this are excluded from the mixture sums
MIN_WEIGHT = 1e-300


@dataclass(frozen=True)
class GmmParams:
    """Mixture parameters: weights (K,), means (K, m), covs (list of SpdMatrix)."""

    weights: np.ndarray
    means: np.ndarray
    covs: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = tuple(make_spd(c) for c in self.covs)
        if not (len(w) == mu.shape[0] == len(covs)):
            raise ValueError("weights, means and covs disagree on K")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex, got {w}")
        if any(c.dim != mu.shape[1] for c in covs):
            raise ValueError("covariance dimension does not match means")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", covs)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def permuted(self, perm) -> "GmmParams":
        """Reorder components so that new component j is old component perm[j]."""
        perm = list(perm)
        return GmmParams(self.weights[perm], self.means[perm], [self.covs[p] for p in perm])


@dataclass(frozen=True)
class PenaltyConfig:
    """Per-cluster penalty strengths and their SPD targets."""

    etas: np.ndarray
    targets: tuple

    def __post_init__(self):
        etas = np.asarray(self.etas, dtype=float).reshape(-1)
        targets = tuple(make_spd(t) for t in self.targets)
        if len(etas) != len(targets):
            raise ValueError("etas and targets disagree on K")
        if np.any(etas < 0) or not np.all(np.isfinite(etas)):
            raise ValueError(f"penalty strengths must be finite and >= 0, got {etas}")
        if len({t.dim for t in targets}) > 1:
            raise ValueError("targets must share one dimension")
        object.__setattr__(self, "etas", etas)
        object.__setattr__(self, "targets", targets)

    def penalty(self, params: GmmParams) -> float:
        """``sum_k eta_k * KL(Sigma_k, T_k)``; zero-strength terms are skipped."""
        if params.k != len(self.etas):
            raise ValueError("penalty and params disagree on K")
        return float(
            sum(
                eta * kl_penalty(cov, t)
                for eta, cov, t in zip(self.etas, params.covs, self.targets)
                if eta > 0
            )
        )


@dataclass(frozen=True)
class Dataset:
    """Observations, one per row, and optional 0-based ground-truth labels."""

    x: np.ndarray
    true_labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"expected an (n, m) observation matrix, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("observations contain non-finite values")
        object.__setattr__(self, "x", x)
        if self.true_labels is not None:
            z = np.asarray(self.true_labels)
            if z.shape != (x.shape[0],):
                raise ValueError("true_labels must have one entry per observation")
            if not np.issubdtype(z.dtype, np.integer):
                if not np.all(z == np.round(z)):
                    raise ValueError("true_labels must be integers")
            object.__setattr__(self, "true_labels", z.astype(int))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        z = None if self.true_labels is None else self.true_labels[idx]
        return Dataset(self.x[idx], z)


def read_csv(path) -> Dataset:
    """Load a dataset written by :func:`write_csv`.

    The header row is mandatory. A trailing column named ``label`` holds
    1-based integer labels.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    has_label = bool(header) and header[-1].strip() == "label"
    m = len(header) - int(has_label)
    if m < 1:
        raise ValueError(f"{path}: no observation columns")
    if any(len(r) != len(header) for r in rows):
        raise ValueError(f"{path}: ragged rows")
    x = np.array([[float(v) for v in r[:m]] for r in rows], dtype=float).reshape(-1, m)
    labels = None
    if has_label:
        labels = np.array([int(r[-1]) for r in rows], dtype=int)
        if labels.size and labels.min() < 1:
            raise ValueError(f"{path}: labels are 1-based")
        labels = labels - 1
    return Dataset(x, labels)


def write_csv(data: Dataset, path) -> Path:
    path = Path(path)
    header = [f"x{j + 1}" for j in range(data.m)]
    if data.true_labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]]
            if data.true_labels is not None:
                row.append(str(int(data.true_labels[i]) + 1))
            w.writerow(row)
    return path


def log_component_density(x, mu, sigma: SpdMatrix):
    """Gaussian log-density of ``x`` under N(mu, sigma).

    ``x`` may be one m-vector or an (n, m) array; the result is a float or
    an n-vector accordingly.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    quad = solve_quad(sigma, x - mu)
    return -0.5 * sigma.dim * LOG_2PI - 0.5 * log_det(sigma) - 0.5 * quad


def weighted_log_densities(data: Dataset, params: GmmParams) -> np.ndarray:
    """(n, K) matrix of ``log pi_k + log N(x_i | mu_k, Sigma_k)``.

    Columns of components with weight below ``MIN_WEIGHT`` are ``-inf``.
    """
    out = np.full((data.n, params.k), -np.inf)
    for k in range(params.k):
        if params.weights[k] < MIN_WEIGHT:
            continue
        out[:, k] = np.log(params.weights[k]) + log_component_density(
            data.x, params.means[k], params.covs[k]
        )
    return out


def log_likelihood(data: Dataset, params: GmmParams) -> float:
    if params.dim != data.m:
        raise ValueError("data and params disagree on dimension")
    return float(np.sum(logsumexp(weighted_log_densities(data, params), axis=1)))


def penalized_log_likelihood(data: Dataset, params: GmmParams, pen: PenaltyConfig) -> float:
    return log_likelihood(data, params) - pen.penalty(params)

