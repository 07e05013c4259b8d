import numpy as np
import pytest

from rgg_safebayes.data_io import load_bundled
from rgg_safebayes.errors import SamplingError, UsageError
from rgg_safebayes.model import EtaPosterior, Hyperparams, full_mask, sample_prior_state
from rgg_safebayes.sampler import ChainConfig, _warmup_windows, leapfrog_step, sample_posterior


def std_normal(q):
    return -0.5 * float(q @ q)


def std_normal_grad(q):
    return -q


def test_leapfrog_zero_momentum_zero_gradient():
    q = np.array([0.3, -1.0])
    q2, p2, div = leapfrog_step(q, np.zeros(2), 0.7, lambda x: np.zeros_like(x), np.ones(2))
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(p2, 0.0)
    assert not div


def test_leapfrog_energy_conservation():
    q, p = np.array([1.0]), np.array([0.5])
    h0 = 0.5 * q @ q + 0.5 * p @ p
    for _ in range(100):
        q, p, _ = leapfrog_step(q, p, 0.1, std_normal_grad, np.ones(1))
    assert abs(0.5 * q @ q + 0.5 * p @ p - h0) < 1e-3


def test_leapfrog_reversible():
    rng = np.random.default_rng(0)
    q0, p0 = rng.standard_normal(3), rng.standard_normal(3)
    mass = np.array([1.0, 2.0, 0.5])

    def grad(q):
        return -np.array([1.0, 3.0, 0.2]) * q

    q, p, _ = leapfrog_step(q0, p0, 0.05, grad, mass)
    qb, pb, _ = leapfrog_step(q, -p, 0.05, grad, mass)
    assert np.max(np.abs(qb - q0)) < 1e-9
    assert np.max(np.abs(-pb - p0)) < 1e-9


def test_leapfrog_flags_nonfinite_gradient():
    _, _, div = leapfrog_step(np.ones(2), np.ones(2), 0.1, lambda q: np.full(2, np.nan), np.ones(2))
    assert div


def test_chain_config_validation():
    for kw in ({"n_chains": 0}, {"target_accept": 1.0}, {"max_tree_depth": 13}, {"n_samples": 0}):
        with pytest.raises(UsageError):
            ChainConfig(**kw)


def test_warmup_windows_stan_schedule():
    init, ends = _warmup_windows(1000)
    assert init == 75
    assert ends == [100, 150, 250, 450, 950]
    # exactly fits 75 + 25 + 50
    assert _warmup_windows(150) == (75, [100])
    # too short: 15% / 75% / 10%
    assert _warmup_windows(100) == (15, [90])


def test_standard_normal_moments():
    cfg = ChainConfig(n_chains=4, n_warmup=500, n_samples=1000, seed=1)
    batch = sample_posterior(std_normal, std_normal_grad, np.zeros(2), cfg)
    assert batch.draws.shape == (4, 1000, 2)
    x = batch.pooled()
    assert np.all(np.abs(x.mean(axis=0)) < 0.1)
    assert np.all(np.abs(x.var(axis=0) - 1) < 0.15)
    assert batch.divergence_count.sum() == 0
    assert np.all(batch.accept_stats > 0.6)


def test_correlated_gaussian_with_scales():
    # strongly different scales exercise the mass-matrix adaptation
    scales = np.array([0.01, 1.0, 30.0])

    def logp(q):
        return -0.5 * float(np.sum((q / scales) ** 2))

    def grad(q):
        return -q / scales**2

    cfg = ChainConfig(n_chains=2, n_warmup=600, n_samples=800, seed=3)
    batch = sample_posterior(logp, grad, np.ones(3) * 0.01, cfg)
    sd = batch.pooled().std(axis=0)
    np.testing.assert_allclose(sd / scales, 1.0, atol=0.15)
    assert np.all(batch.mean_tree_depth < 5)


def test_determinism():
    cfg = ChainConfig(n_chains=2, n_warmup=100, n_samples=100, seed=9)
    a = sample_posterior(std_normal, std_normal_grad, np.zeros(2), cfg)
    b = sample_posterior(std_normal, std_normal_grad, np.zeros(2), cfg)
    assert np.array_equal(a.draws, b.draws)
    c = sample_posterior(std_normal, std_normal_grad, np.zeros(2), ChainConfig(2, 100, 100, seed=10))
    assert not np.array_equal(a.draws, c.draws)


def test_init_forms_and_bad_start():
    cfg = ChainConfig(n_chains=2, n_warmup=20, n_samples=10)
    per_chain = np.array([[1.0, 1.0], [-1.0, -1.0]])
    b = sample_posterior(std_normal, std_normal_grad, per_chain, cfg)
    assert b.draws.shape == (2, 10, 2)
    b = sample_posterior(std_normal, std_normal_grad, lambda c: per_chain[c], cfg)
    assert b.draws.shape == (2, 10, 2)
    with pytest.raises(SamplingError):
        sample_posterior(lambda q: -np.inf, std_normal_grad, np.zeros(2), cfg)


def test_divergences_reported_on_pathological_target():
    # a funnel-like cliff: log-density drops by 1e6 outside |q| < 1
    def logp(q):
        return -0.5 * float(q @ q) - 1e6 * float(np.sum(np.maximum(np.abs(q) - 1, 0) ** 2))

    def grad(q):
        return -q - 2e6 * np.sign(q) * np.maximum(np.abs(q) - 1, 0)

    cfg = ChainConfig(n_chains=1, n_warmup=50, n_samples=200, seed=0)
    batch = sample_posterior(logp, grad, np.zeros(2), cfg)
    assert np.all(np.isfinite(batch.draws))
    assert np.all(np.abs(batch.draws) < 1.01)


def test_karate_smoke():
    data = load_bundled("karate")
    h = Hyperparams(eta=0.1)
    post = EtaPosterior(data, full_mask(data), "euclidean", h)
    cfg = ChainConfig(n_chains=2, n_warmup=150, n_samples=150, seed=4)
    init = sample_prior_state(data.n_nodes, "euclidean", h, 0).to_vector()
    batch = sample_posterior(post.logp, post.grad, init, cfg, value_and_grad_fn=post.logp_and_grad)
    assert np.all(np.isfinite(batch.draws))
    assert np.all(batch.divergence_count < 0.05 * cfg.n_samples)


def test_large_energy_drop_from_far_start():
    # starting deep in the tail, the first trajectories lower the energy by far
    # more than exp() can represent; acceptance must saturate at 1
    scale = 1e-3

    def logp(q):
        return -0.5 * float(q @ q) / scale**2

    def grad(q):
        return -q / scale**2

    cfg = ChainConfig(n_chains=1, n_warmup=100, n_samples=50, seed=2)
    batch = sample_posterior(logp, grad, np.full(2, 5.0), cfg)
    assert np.all(np.abs(batch.draws[0, -10:]) < 50 * scale)
