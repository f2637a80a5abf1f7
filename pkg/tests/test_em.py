import numpy as np
import pytest

import rgem.em as em
from rgem.em import FitConfig, Responsibilities, e_step, fit, m_step
from rgem.errors import ClusterCollapse, DegenerateData, EmptyCluster
from rgem.kmeans import kmeans, kmeans_init
from rgem.model import Dataset, GmmParams, PenaltyConfig
from rgem.synth import nmi

from conftest import random_spd
from em_oracles import (
    ascent_violations,
    direct_responsibilities,
    precision_direction_derivative,
)


def blobs(rng, centers, per, scale=1.0):
    centers = np.asarray(centers, dtype=float)
    x = np.vstack([c + scale * rng.standard_normal((per, centers.shape[1])) for c in centers])
    z = np.repeat(np.arange(len(centers)), per)
    return Dataset(x, z)


# ---------------------------------------------------------------- E-step

def test_e_step_single_cluster(rng):
    data = Dataset(rng.standard_normal((8, 2)))
    r = e_step(data, GmmParams([1.0], [[0.0, 0.0]], [np.eye(2)]))
    np.testing.assert_array_equal(r.p, np.ones((8, 1)))


def test_e_step_symmetric():
    p = GmmParams([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]])
    np.testing.assert_allclose(e_step(Dataset(np.zeros((1, 1))), p).p, [[0.5, 0.5]])


def test_e_step_density_ratio():
    p = GmmParams([0.5, 0.5], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    r = e_step(Dataset(np.zeros((1, 1))), p)
    assert r.p[0, 0] == pytest.approx(1 / (1 + np.exp(-0.5)), abs=1e-12)
    assert r.p[0, 0] == pytest.approx(0.622459, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_e_step_rows_stochastic(seed):
    rng = np.random.default_rng(seed)
    m = 30
    p = GmmParams(rng.dirichlet(np.ones(3)), 3 * rng.standard_normal((3, m)),
                  [random_spd(rng, m, ridge=0.1) for _ in range(3)])
    r = e_step(Dataset(5 * rng.standard_normal((40, m))), p)
    assert np.all(np.abs(r.p.sum(axis=1) - 1) < 1e-12)
    assert np.all((r.p >= 0) & (r.p <= 1))


def test_e_step_brute_force(rng):
    m = 3
    p = GmmParams([0.2, 0.3, 0.5], rng.standard_normal((3, m)), [random_spd(rng, m) for _ in range(3)])
    x = rng.standard_normal((15, m))
    expected = direct_responsibilities(x, p.weights, p.means, [c.entries for c in p.covs])
    np.testing.assert_allclose(e_step(Dataset(x), p).p, expected, atol=1e-12)


def test_hard_labels_tie_lowest_index():
    r = Responsibilities(np.array([[0.5, 0.5], [0.2, 0.8]]))
    np.testing.assert_array_equal(r.hard_labels(), [0, 1])


# ---------------------------------------------------------------- M-step

def test_m_step_classic(rng):
    x = rng.standard_normal((20, 3))
    out = m_step(Dataset(x), Responsibilities(np.ones((20, 1))),
                 PenaltyConfig([0.0], [np.eye(3)]))
    np.testing.assert_allclose(out.means[0], x.mean(axis=0))
    np.testing.assert_allclose(out.covs[0].entries, np.cov(x.T, bias=True), atol=1e-14)
    assert out.weights[0] == 1.0


def test_m_step_no_penalty_matches_zero_strength(rng):
    data = Dataset(rng.standard_normal((30, 2)))
    resp = Responsibilities(rng.dirichlet(np.ones(2), size=30))
    a = m_step(data, resp)
    b = m_step(data, resp, PenaltyConfig([0.0, 0.0], [np.eye(2), np.eye(2)]))
    for ca, cb in zip(a.covs, b.covs):
        np.testing.assert_array_equal(ca.entries, cb.entries)


def test_m_step_huge_penalty(rng):
    t = random_spd(rng, 3)
    out = m_step(Dataset(rng.standard_normal((10, 3))), Responsibilities(np.ones((10, 1))),
                 PenaltyConfig([1e12], [t]))
    assert np.linalg.norm(out.covs[0].entries - t) < 1e-10


def test_m_step_symmetric_blend(rng):
    n = 100
    data = Dataset(rng.standard_normal((n, 2)))
    p = np.zeros((n, 2))
    p[: n // 2, 0] = 1
    p[n // 2:, 1] = 1
    t = np.diag([3.0, 0.5])
    out = m_step(data, Responsibilities(p), PenaltyConfig([50.0, 50.0], [t, t]))
    assert out.weights[0] == 0.5
    xs = data.x[: n // 2]
    s = np.cov(xs.T, bias=True)
    np.testing.assert_allclose(out.covs[0].entries, 0.5 * s + 0.5 * t, atol=1e-13)


def test_m_step_four_points():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    out = m_step(Dataset(x), Responsibilities(np.ones((4, 1))), PenaltyConfig([1.0], [np.eye(2)]))
    np.testing.assert_allclose(out.means[0], [1.0, 1.0])
    np.testing.assert_allclose(out.covs[0].entries, np.eye(2), atol=1e-15)


def test_m_step_empty_cluster(rng):
    p = np.zeros((5, 2))
    p[:, 0] = 1
    with pytest.raises(EmptyCluster) as info:
        m_step(Dataset(rng.standard_normal((5, 2))), Responsibilities(p))
    assert info.value.cluster == 1


def test_m_step_loading(rng):
    x = np.zeros((4, 3))
    x[:, 0] = [0, 1, 2, 3]
    out = m_step(Dataset(x), Responsibilities(np.ones((4, 1))), loading=1e-6)
    s = np.cov(x.T, bias=True)
    np.testing.assert_allclose(out.covs[0].entries, s + 1e-6 * np.trace(s) / 3 * np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_m_step_stationary(seed):
    rng = np.random.default_rng(seed)
    n, m, k = 50, 4, 2
    x = rng.standard_normal((n, m))
    p = rng.dirichlet(np.ones(k), size=n)
    etas = rng.uniform(0.5, 40, k)
    targets = [random_spd(rng, m) for _ in range(k)]
    out = m_step(Dataset(x), Responsibilities(p), PenaltyConfig(etas, targets))
    for j in range(k):
        d = random_spd(rng, m, ridge=0.1)
        d *= np.linalg.norm(np.linalg.inv(out.covs[j].entries)) / np.linalg.norm(d)
        deriv, q = precision_direction_derivative(x, p, out, etas, targets, j, d)
        assert abs(deriv) / abs(q) < 1e-5


def test_stationarity_check_detects_unpenalized_update(rng):
    n, m = 50, 4
    x = rng.standard_normal((n, m))
    p = np.ones((n, 1))
    etas, targets = [30.0], [5 * np.eye(m)]
    wrong = m_step(Dataset(x), Responsibilities(p))
    d = np.eye(m) * np.linalg.norm(np.linalg.inv(wrong.covs[0].entries)) / 2
    deriv, q = precision_direction_derivative(x, p, wrong, etas, targets, 0, d)
    assert abs(deriv) / abs(q) > 1e-3


def test_m_step_weights_sum_to_one(rng):
    p = rng.dirichlet(np.ones(4), size=37)
    out = m_step(Dataset(rng.standard_normal((37, 2))), Responsibilities(p), loading=1e-6)
    assert abs(out.weights.sum() - 1) < 1e-14


# ---------------------------------------------------------------- k-means

def test_kmeans_exact_fit():
    x = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]])
    labels, params = kmeans_init(Dataset(x), 3, seed=0)
    assert sorted(labels) == [0, 1, 2]
    for j in range(3):
        np.testing.assert_array_equal(params.means[j], x[labels == j][0])
        c = params.covs[j].entries
        np.testing.assert_allclose(c, c[0, 0] * np.eye(2))
        assert 0 < c[0, 0] < 1e-4


def test_kmeans_two_blobs(rng):
    data = blobs(rng, [[-10, 0], [10, 0]], 50)
    labels, params = kmeans_init(data, 2, seed=4)
    nearest = np.argmin(np.abs(data.x[:, None, 0] - np.array([-10, 10])[None]), axis=1)
    assert nmi(labels, nearest) == 1.0
    assert nmi(labels, data.true_labels) == 1.0


def test_kmeans_single_cluster(rng):
    data = Dataset(rng.standard_normal((30, 4)))
    labels, params = kmeans_init(data, 1, seed=0)
    assert np.all(labels == 0)
    np.testing.assert_allclose(params.means[0], data.x.mean(axis=0))


def test_kmeans_degenerate():
    with pytest.raises(DegenerateData):
        kmeans(Dataset(np.ones((5, 2))), 2)


def test_kmeans_deterministic(rng):
    data = blobs(rng, [[0, 0], [3, 3], [-3, 3]], 20)
    a, b = kmeans(data, 3, seed=9), kmeans(data, 3, seed=9)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.converged


# ---------------------------------------------------------------- fit

def test_fit_single_gaussian(rng):
    data = Dataset(rng.standard_normal((80, 3)) + 2.0)
    rep = fit(data, FitConfig(k=1, seed=1))
    np.testing.assert_allclose(rep.params.means[0], data.x.mean(axis=0), atol=1e-12)
    s = np.cov(data.x.T, bias=True)
    beta = 80 / (rep.etas[0] + 80)
    expected = beta * s + (1 - beta) * rep.targets[0].entries
    np.testing.assert_allclose(rep.params.covs[0].entries, expected, atol=1e-12)


def test_fit_separated_clusters(rng):
    centers = 20 / np.sqrt(2) * np.eye(5)[:3]
    data = blobs(rng, centers, 100)
    rep = fit(data, FitConfig(k=3, seed=2))
    nearest = np.argmin(((data.x[:, None] - centers[None]) ** 2).sum(-1), axis=1)
    assert nmi(nearest, data.true_labels) == 1.0
    assert nmi(rep.hard_labels, data.true_labels) >= 0.99


@pytest.mark.parametrize("seed", range(3))
def test_zero_penalty_equals_unloaded_vanilla(seed):
    rng = np.random.default_rng(seed)
    data = blobs(rng, 3 * np.eye(4)[:3], 60)
    a = fit(data, FitConfig(k=3, seed=seed, eta_grid=(0.0,), store_covariances=True, tol=1e-10))
    b = fit(data, FitConfig(k=3, seed=seed, mode="vanilla", loading=0.0,
                            store_covariances=True, tol=1e-10))
    assert len(a.trace) == len(b.trace)
    for ra, rb in zip(a.trace, b.trace):
        for ca, cb in zip(ra.covs, rb.covs):
            assert np.linalg.norm(ca - cb) < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_fit_ascent(seed):
    rng = np.random.default_rng(seed)
    data = blobs(rng, 2 * np.eye(6)[:3], 25, scale=1.2)
    rep = fit(data, FitConfig(k=3, seed=seed, cv_refresh_every=5, tol=1e-12))
    assert ascent_violations(rep.trace) == []


def test_fit_deterministic(rng):
    data = blobs(rng, 2 * np.eye(4)[:3], 30)
    a, b = fit(data, FitConfig(k=3, seed=5)), fit(data, FitConfig(k=3, seed=5))
    np.testing.assert_array_equal(a.hard_labels, b.hard_labels)
    assert [r.penalized_loglik for r in a.trace] == [r.penalized_loglik for r in b.trace]


def test_fit_permutation_equivariant(rng):
    data = blobs(rng, 2.5 * np.eye(4)[:3], 30)
    labels, params = kmeans_init(data, 3, seed=0)
    perm = [2, 0, 1]
    inv = np.argsort(perm)
    a = fit(data, FitConfig(k=3, seed=1), init=(labels, params))
    b = fit(data, FitConfig(k=3, seed=1), init=(inv[labels], params.permuted(perm)))
    np.testing.assert_allclose(b.params.means, a.params.means[perm], atol=1e-10)
    np.testing.assert_allclose(b.etas, a.etas[perm])
    np.testing.assert_array_equal(b.hard_labels, inv[a.hard_labels])


def test_fit_reference_distances(rng):
    data = blobs(rng, 3 * np.eye(3)[:2], 40)
    ref = [np.eye(3), 2 * np.eye(3)]
    rep = fit(data, FitConfig(k=2, seed=0), reference=ref)
    last = rep.trace[-1].frob
    assert last.shape == (2, 2)
    assert last[1, 0] == pytest.approx(np.linalg.norm(rep.params.covs[1].entries - ref[0]))


def test_fit_reseeds_empty_cluster(rng):
    data = Dataset(rng.standard_normal((40, 2)))
    far = GmmParams([0.5, 0.5], [[0.0, 0.0], [1e3, 1e3]], [np.eye(2), np.eye(2)])
    labels = np.zeros(40, dtype=int)
    labels[:2] = 1
    rep = fit(data, FitConfig(k=2, seed=0, mode="vanilla"), init=(labels, far))
    assert rep.collapses == {1: 1}
    assert rep.trace[1].reseeded


def test_fit_aborts_after_repeated_collapse(rng, monkeypatch):
    def always_empty(*a, **kw):
        raise EmptyCluster(0, 0.0)

    monkeypatch.setattr(em, "m_step", always_empty)
    with pytest.raises(ClusterCollapse):
        fit(Dataset(rng.standard_normal((30, 2))), FitConfig(k=2, seed=0))


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(k=2, max_iter=0)
    with pytest.raises(ValueError):
        FitConfig(k=2, tol=0)
    with pytest.raises(ValueError):
        FitConfig(k=2, eta_grid=())
    with pytest.raises(ValueError):
        FitConfig(k=2, mode="bayes")


def test_fit_needs_more_points_than_clusters():
    with pytest.raises(ValueError):
        fit(Dataset(np.eye(3)), FitConfig(k=3))
