from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iaflow import tensor as T
from iaflow.errors import ContractError, DomainError
from iaflow.flows import BaseGaussianParams, flow_posterior_sample
from iaflow.objectives import (
    FreeBitsConfig,
    bernoulli_loglik,
    discretized_logistic_loglik,
    elbo_estimate,
    free_bits_objective,
    gaussian_loglik,
    iwae_logp,
    kl_diag_gaussian,
    std_normal_logpdf,
)
from iaflow.oracle import quadrature_normalize
from iaflow.prng import Prng
from iaflow.tensor import Tape, backward

LOG_2PI = math.log(2 * math.pi)


def _v(t):
    return np.asarray(t.value)


# -- likelihoods -----------------------------------------------------------------


def test_bernoulli_examples():
    assert _v(bernoulli_loglik([[1.0]], [[0.0]]))[0] == pytest.approx(-0.69315, abs=1e-5)
    with np.errstate(over="raise"):
        assert abs(_v(bernoulli_loglik([[0.0]], [[-50.0]]))[0]) < 1e-20
        assert np.isfinite(_v(bernoulli_loglik([[1.0]], [[-800.0]]))[0])


@pytest.mark.parametrize("seed", range(10))
def test_bernoulli_matches_naive(seed):
    rng = Prng(seed)
    logits = rng.normal((3, 6)) * 3
    x = (rng.uniform(0, 1, (3, 6)) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-logits))
    naive = np.sum(x * np.log(p) + (1 - x) * np.log(1 - p), axis=1)
    np.testing.assert_allclose(_v(bernoulli_loglik(x, logits)), naive, rtol=0, atol=1e-10)


def test_discretized_logistic_reference_bin():
    mass = math.tanh(1 / 512) / 2  # sigmoid(1/256) - 1/2 in closed form
    got = _v(discretized_logistic_loglik([[0.0]], [[0.0]], [0.0]))[0]
    assert got == pytest.approx(math.log(mass), abs=1e-12)
    assert math.exp(got) == pytest.approx(9.76562e-4, abs=1e-9)
    assert got == pytest.approx(-6.93147, abs=1e-5)


def test_discretized_logistic_mode_is_bin_centre():
    x = 100 / 256
    grid = x + np.linspace(-0.01, 0.01, 2001)
    ll = _v(discretized_logistic_loglik(np.full((grid.size, 1), x), grid[:, None], [math.log(0.05)]))
    assert grid[np.argmax(ll)] == pytest.approx(x + 1 / 512, abs=1e-5)


def test_discretized_logistic_sharp_scale_concentrates():
    ll = _v(discretized_logistic_loglik([[0.5]], [[0.5 + 1 / 512]], [math.log(1e-5)]))[0]
    assert math.exp(ll) > 0.999


def test_discretized_logistic_floor():
    ll = _v(discretized_logistic_loglik([[0.0]], [[1.0]], [math.log(1e-4)]))[0]
    assert ll == pytest.approx(math.log(1e-12))


def _sigmoid(a):
    return 1 / (1 + math.exp(-a))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(0.01, 0.3))
def test_discretized_logistic_bins_telescope(mu, s):
    bins = np.arange(256)[:, None] / 256
    total = np.exp(_v(discretized_logistic_loglik(bins, np.full_like(bins, mu), [math.log(s)]))).sum()
    # floored far-off bins contribute at most 256 * 1e-12
    assert total == pytest.approx(_sigmoid((1 - mu) / s) - _sigmoid(-mu / s), abs=1e-9)
    assert total <= 1.0 + 256e-12
    if s <= min(mu, 1 - mu) / 5.3:
        # both tails outside [0, 1] hold under 1% of the mass
        assert 0.99 < total < 1.0001


def test_discretized_logistic_gradient_matches_fd():
    rng = Prng(3)
    x = np.floor(rng.uniform(0, 1, (4, 3)) * 256) / 256
    mu0 = rng.uniform(0, 1, (4, 3))
    log_s0 = rng.normal(3) * 0.3 - 2
    tape = Tape()
    mu, log_s = tape.variable(mu0), tape.variable(log_s0)
    backward(tape, T.reduce_sum(discretized_logistic_loglik(x, mu, log_s)))

    def f(m, ls):
        return float(np.sum(_v(discretized_logistic_loglik(x, m, ls))))

    h = 1e-6
    num = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        num[i] = (f(mu0, log_s0 + e) - f(mu0, log_s0 - e)) / (2 * h)
    np.testing.assert_allclose(log_s.grad, num, rtol=1e-5, atol=1e-6)


def test_std_normal_logpdf_examples():
    assert _v(std_normal_logpdf([[0.0, 0.0]]))[0] == pytest.approx(-1.83788, abs=1e-5)
    assert _v(std_normal_logpdf([[1.0, 0.0]]))[0] == pytest.approx(-0.5 - LOG_2PI, abs=1e-15)
    mass = quadrature_normalize(lambda z: _v(std_normal_logpdf(z)), [(-10.0, 10.0)])
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_gaussian_loglik_example():
    got = _v(gaussian_loglik([[1.0, 2.0]], [[1.0, 0.0]], 0.5))[0]
    assert got == pytest.approx(-0.5 * 16 - 2 * (math.log(0.5) + 0.5 * LOG_2PI), abs=1e-12)


# -- KL and ELBO -----------------------------------------------------------------


def test_kl_examples():
    assert _v(kl_diag_gaussian([[0.0, 0.0]], [[1.0, 1.0]]))[0] == 0.0
    assert _v(kl_diag_gaussian([[1.0]], [[1.0]]))[0] == 0.5
    with pytest.raises(DomainError):
        kl_diag_gaussian([[0.0]], [[0.0]])


@pytest.mark.parametrize("seed", range(3))
def test_kl_matches_monte_carlo(seed):
    rng = Prng(seed)
    mu, sigma = rng.normal(3), np.exp(0.5 * rng.normal(3))
    z = mu + sigma * rng.normal((1_000_000, 3))
    log_ratio = np.sum(-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) + 0.5 * z**2, axis=1)
    se = log_ratio.std() / math.sqrt(len(log_ratio))
    assert abs(log_ratio.mean() - _v(kl_diag_gaussian(mu[None], sigma[None]))[0]) < 3 * se


def _diag_sample(mu, sigma, eps, tape=None):
    tape = tape or Tape()
    base = BaseGaussianParams(tape.constant(mu), tape.constant(sigma))
    return flow_posterior_sample(base, [], eps)


def _lik(x, z):
    return gaussian_loglik(x, z, 1.0)


def test_posterior_equal_to_prior_gives_recon():
    eps = Prng(0).normal((5, 2))
    sample = _diag_sample(np.zeros((5, 2)), np.ones((5, 2)), eps)
    terms = elbo_estimate(np.zeros((5, 2)), sample, _lik)
    assert np.array_equal(_v(terms.log_prior) - _v(terms.log_q), np.zeros(5))
    assert np.array_equal(_v(terms.elbo), _v(terms.recon))


def test_elbo_identity_is_bit_exact():
    rng = Prng(1)
    sample = _diag_sample(rng.normal((6, 2)), np.exp(rng.normal((6, 2))), rng.normal((6, 2)))
    terms = elbo_estimate(rng.normal((6, 2)), sample, _lik)
    assert np.array_equal(_v(terms.elbo), _v(terms.recon) + _v(terms.log_prior) - _v(terms.log_q))


def conjugate_logp(x):
    return -0.5 * x**2 / 2 - 0.5 * math.log(2 * math.pi * 2)


@pytest.mark.parametrize("x", [-1.7, 0.0, 0.4, 2.5])
def test_true_posterior_makes_elbo_exact(x):
    """p(z) = N(0,1), p(x|z) = N(z,1): q = N(x/2, 1/2) gives elbo = log p(x) for every draw."""
    eps = Prng(2).normal((50, 1))
    sample = _diag_sample(np.full((50, 1), x / 2), np.full((50, 1), math.sqrt(0.5)), eps)
    elbo = _v(elbo_estimate(np.full((50, 1), x), sample, _lik).elbo)
    np.testing.assert_allclose(elbo, conjugate_logp(x), rtol=0, atol=1e-12)


def test_elbo_gap_equals_integrated_kl():
    x, m, s = 1.3, 0.2, 0.9
    eps = Prng(4).normal((400_000, 1))
    sample = _diag_sample(np.full((len(eps), 1), m), np.full((len(eps), 1), s), eps)
    elbo = _v(elbo_estimate(np.full((len(eps), 1), x), sample, _lik).elbo)
    gap = conjugate_logp(x) - elbo.mean()
    grid = np.linspace(-12, 12, 200_001)
    q = np.exp(-0.5 * ((grid - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    post = np.exp(-((grid - x / 2) ** 2)) / math.sqrt(math.pi)
    kl = np.trapezoid(q * (np.log(q) - np.log(post)), grid)
    assert gap >= -3 * elbo.std() / math.sqrt(len(elbo))
    assert gap == pytest.approx(kl, abs=1e-3)


# -- free bits -------------------------------------------------------------------


def test_free_bits_examples():
    cfg = FreeBitsConfig.per_dimension(0.5, 2)
    assert float(_v(free_bits_objective(0.0, [0.2, 0.7], cfg))) == pytest.approx(-1.2, abs=1e-15)
    recon, kls = np.array([-3.0, -5.0]), np.array([0.3, 1.4])
    zero = FreeBitsConfig.per_dimension(0.0, 2)
    assert float(_v(free_bits_objective(recon, kls, zero))) == -4.0 - 1.7
    assert float(_v(free_bits_objective(recon, kls, FreeBitsConfig.per_dimension(0.25, 2)))) == -4.0 - 1.7


def test_free_bits_rejects_negative_lambda():
    with pytest.raises(ContractError):
        FreeBitsConfig(-0.1)


def test_groups_must_partition():
    with pytest.raises(ContractError):
        FreeBitsConfig(0.1, [[0], [0, 1]]).matrix(2)
    assert FreeBitsConfig(0.1, [[1], [0, 2]]).matrix(3).tolist() == [[0, 1], [1, 0], [0, 1]]


def test_clamp_blocks_gradient_below_lambda():
    tape = Tape()
    kls = tape.variable(np.array([0.2, 0.7]))
    backward(tape, free_bits_objective(tape.constant(0.0), kls, FreeBitsConfig.per_dimension(0.5, 2)))
    assert kls.grad.tolist() == [0.0, -1.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 5), min_size=1, max_size=6), st.floats(0, 3), st.floats(-50, 0))
def test_free_bits_never_exceeds_elbo(kls, lam, recon):
    cfg = FreeBitsConfig.per_dimension(lam, len(kls))
    assert float(_v(free_bits_objective(recon, kls, cfg))) <= recon - sum(kls) + 1e-12


# -- importance sampling ---------------------------------------------------------


def _conj_posterior(mu, sigma):
    def posterior(xt, eps):
        n = xt.shape[0]
        return _diag_sample(np.full((n, 1), mu), np.full((n, 1), sigma), eps, xt.tape)

    return posterior


def test_iwae_single_sample_equals_elbo():
    x = np.array([[0.8], [-0.3]])
    post = _conj_posterior(0.1, 0.9)
    got = iwae_logp(x, 1, post, _lik, Prng(5), 1)
    eps = Prng(5).normal((1, 2, 1))[0]
    xt = Tape().constant(x)
    elbo = _v(elbo_estimate(xt, post(xt, eps), _lik).elbo)
    np.testing.assert_array_equal(got, elbo)


def test_iwae_non_decreasing_in_samples():
    x = np.array([[1.5]])
    post = _conj_posterior(0.0, 1.2)
    rng = Prng(6)
    one = np.array([iwae_logp(x, 1, post, _lik, rng, 1)[0] for _ in range(200)])
    many = np.array([iwae_logp(x, 64, post, _lik, rng, 1)[0] for _ in range(200)])
    se = math.sqrt(one.var() / 200 + many.var() / 200)
    assert many.mean() >= one.mean() - 2 * se


def test_iwae_close_to_analytic_on_conjugate_model():
    rng = Prng(7)
    for x in (0.9, -1.4):
        post = _conj_posterior(x / 2 + 0.03, 0.72)
        errors = [iwae_logp(np.array([[x]]), 128, post, _lik, rng, 1)[0] - conjugate_logp(x) for _ in range(20)]
        assert np.mean(np.abs(errors)) < 0.01


def test_iwae_requires_samples():
    with pytest.raises(ContractError):
        iwae_logp(np.zeros((1, 1)), 0, _conj_posterior(0, 1), _lik, Prng(0), 1)
