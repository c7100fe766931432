"""Likelihoods, priors, ELBO terms, free bits and importance-sampled log p(x)."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError
from .flows import LOG_2PI, PosteriorSample
from .tensor import Tape, Tensor

BIN_WIDTH = 1.0 / 256.0
MASS_FLOOR = 1e-12


def _tensor(x, tape: Tape | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return (tape or Tape()).constant(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _tensor(b, a.tape) if not isinstance(b, Tensor) else b
    b = _tensor(b)
    return _tensor(a, b.tape), b


def bernoulli_loglik(x, logits) -> Tensor:
    """Sum over the last axis of ``x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))``.

    Evaluated as ``x l - softplus(l)``, which never overflows.
    """
    x, logits = _pair(x, logits)
    return T.reduce_sum(x * logits - T.softplus(logits), axis=-1)


def discretized_logistic_loglik(x, mu, log_s) -> Tensor:
    """Log mass of the 1/256-wide bin starting at ``x`` under Logistic(mu, s).

    ``log_s`` broadcasts against the last (channel) axis. The bin mass is
    floored at 1e-12. For bins right of the location the complementary CDF
    is differenced instead, which keeps tail masses accurate.
    """
    mu, x = _pair(mu, x)
    log_s = _tensor(log_s, mu.tape)
    inv_s = T.exp(-log_s)
    upper = (x + BIN_WIDTH - mu) * inv_s
    lower = (x - mu) * inv_s
    right = (lower.value > 0).astype(np.float64)
    tail = T.sigmoid(-lower) - T.sigmoid(-upper)
    body = T.sigmoid(upper) - T.sigmoid(lower)
    mass = T.maximum(right * tail + (1.0 - right) * body, MASS_FLOOR)
    return T.reduce_sum(T.log(mass), axis=-1)


def gaussian_loglik(x, mean, sigma: float) -> Tensor:
    """Isotropic Gaussian observation model with fixed standard deviation."""
    mean, x = _pair(mean, x)
    r = (x - mean) * (1.0 / sigma)
    return T.reduce_sum(-0.5 * T.square(r) - (math.log(sigma) + 0.5 * LOG_2PI), axis=-1)


def std_normal_logpdf_dims(z) -> Tensor:
    z = _tensor(z)
    return -0.5 * T.square(z) - 0.5 * LOG_2PI


def std_normal_logpdf(z) -> Tensor:
    return T.reduce_sum(std_normal_logpdf_dims(z), axis=-1)


def kl_diag_gaussian(mu, sigma) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu, sigma = _pair(mu, sigma)
    if np.any(sigma.value <= 0):
        raise DomainError("kl_diag_gaussian: sigma must be strictly positive")
    return 0.5 * T.reduce_sum(T.square(mu) + T.square(sigma) - 1.0 - 2.0 * T.log(sigma), axis=-1)


@dataclass
class FreeBitsConfig:
    """Free-bits threshold ``lam`` (nats per group) and a partition of latent indices."""

    lam: float
    groups: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"free bits lambda must be >= 0, got {self.lam}")
        self.groups = [np.asarray(g, dtype=np.int64) for g in self.groups]

    @classmethod
    def per_dimension(cls, lam: float, dim: int) -> FreeBitsConfig:
        return cls(lam, [np.array([i]) for i in range(dim)])

    def matrix(self, dim: int) -> np.ndarray:
        """(D, K) indicator matrix; validates that the groups partition 0..D-1."""
        flat = np.concatenate(self.groups) if self.groups else np.array([], dtype=np.int64)
        if not np.array_equal(np.sort(flat), np.arange(dim)):
            raise ContractError(f"free-bits groups do not partition {dim} latent dimensions")
        G = np.zeros((dim, len(self.groups)))
        for k, g in enumerate(self.groups):
            G[g, k] = 1.0
        return G


@dataclass
class ObjectiveTerms:
    """Per-row ELBO terms plus minibatch-mean KL estimates per latent group."""

    recon: Tensor
    log_prior: Tensor
    log_q: Tensor
    elbo: Tensor
    group_kls: Tensor | None = None

    def mean_elbo(self) -> float:
        return float(self.elbo.value.mean())


def group_kl(sample: PosteriorSample, log_prior_dims: Tensor, groups: FreeBitsConfig) -> Tensor:
    """Minibatch-mean Monte-Carlo KL per group, shape (K,)."""
    dim = sample.z.shape[-1]
    G = groups.matrix(dim)
    kl_dims = T.reduce_mean(sample.log_q_dims - log_prior_dims, axis=0)
    out = T.affine(T.reshape(kl_dims, (1, dim)), G, np.zeros(G.shape[1]))
    return T.reshape(out, (G.shape[1],))


def elbo_estimate(x, sample: PosteriorSample, lik: Callable, groups: FreeBitsConfig | None = None) -> ObjectiveTerms:
    """Single-sample ELBO per row: ``log p(x|z) + log p(z) - log q(z|x)``.

    ``lik(x, z)`` returns the per-row reconstruction log-likelihood.
    """
    recon = lik(x, sample.z)
    prior_dims = std_normal_logpdf_dims(sample.z)
    log_prior = T.reduce_sum(prior_dims, axis=-1)
    elbo = recon + log_prior - sample.log_q
    kls = None if groups is None else group_kl(sample, prior_dims, groups)
    return ObjectiveTerms(recon, log_prior, sample.log_q, elbo, kls)


def free_bits_objective(recon, group_kls, cfg: FreeBitsConfig) -> Tensor:
    """``mean(recon) - sum_j max(lam, kl_j)``; with ``lam == 0`` no clamp is applied."""
    if cfg.lam < 0:
        raise ContractError(f"free bits lambda must be >= 0, got {cfg.lam}")
    recon, group_kls = _pair(recon, group_kls)
    if recon.ndim > 0:
        recon = T.reduce_mean(recon)
    penalty = group_kls if cfg.lam == 0 else T.maximum(group_kls, cfg.lam)
    return recon - T.reduce_sum(penalty)


def log_weights(x: np.ndarray, posterior: Callable, lik: Callable, eps: np.ndarray) -> np.ndarray:
    """``log p(x, z_s) - log q(z_s|x)`` for each noise draw; eps is (S, batch, D)."""
    out = np.empty(eps.shape[:2])
    for s in range(eps.shape[0]):
        tape = Tape()
        xt = tape.constant(x)
        terms = elbo_estimate(xt, posterior(xt, eps[s]), lik)
        out[s] = terms.elbo.value
    return out


def logmeanexp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.mean(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def iwae_logp(x, S: int, posterior: Callable, lik: Callable, prng, latent_dim: int) -> np.ndarray:
    """Importance-sampled ``log p(x)`` per row from ``S`` posterior draws."""
    if S < 1:
        raise ContractError(f"iwae_logp: need S >= 1, got {S}")
    x = np.asarray(x, dtype=np.float64)
    eps = prng.normal((S, x.shape[0], latent_dim))
    return logmeanexp(log_weights(x, posterior, lik, eps), axis=0)

