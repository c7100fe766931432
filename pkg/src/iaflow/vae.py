"""Small fully connected VAEs with diagonal, linear-IAF or IAF posteriors."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .flows import (
    SIGMA_FLOOR,
    BaseGaussianParams,
    LinearIaf,
    PosteriorSample,
    build_chain,
    flow_posterior_sample,
    unit_lower_triangular,
)
from .layers import Dense, data_dependent_init
from .made import MadeNetwork, init_forget_bias
from .objectives import (
    FreeBitsConfig,
    ObjectiveTerms,
    bernoulli_loglik,
    discretized_logistic_loglik,
    elbo_estimate,
    free_bits_objective,
    gaussian_loglik,
)
from .tensor import ParamStore, Tensor

POSTERIORS = ("diagonal", "linear_iaf", "iaf")
LIKELIHOODS = ("bernoulli", "discretized_logistic", "gaussian", "linear_gaussian")


class VAE:
    """Encoder, optional flow and decoder sharing one :class:`ParamStore`.

    Parameters are created in a fixed order (encoder, decoder, then
    posterior-specific parts) so that models differing only in their
    posterior start from identical encoder/decoder weights for one seed.

    ``likelihood="linear_gaussian"`` uses the fixed decoder
    ``x ~ N(A z, sigma_obs^2 I)`` with ``A = decoder_matrix`` and no
    trainable decoder parameters.
    """

    def __init__(
        self,
        obs_dim: int,
        latent_dim: int,
        prng,
        *,
        hidden=(64,),
        posterior: str = "iaf",
        iaf_steps: int = 2,
        made_hidden=(32, 32),
        iaf_mode: str = "gated",
        context_dim: int = 8,
        likelihood: str = "bernoulli",
        sigma_obs: float = 0.1,
        forget_bias: float = 2.0,
        decoder_matrix=None,
        nonlinearity: str = "elu",
        reverse: bool = True,
    ):
        if posterior not in POSTERIORS:
            raise ContractError(f"unknown posterior {posterior!r}; expected one of {POSTERIORS}")
        if likelihood not in LIKELIHOODS:
            raise ContractError(f"unknown likelihood {likelihood!r}; expected one of {LIKELIHOODS}")
        self.obs_dim = obs_dim
        self.latent_dim = latent_dim
        self.posterior_kind = posterior
        self.likelihood = likelihood
        self.sigma_obs = sigma_obs
        self.nonlinearity = nonlinearity
        self.store = store = ParamStore()
        hidden = list(hidden)

        self.encoder = _mlp(store, "enc", obs_dim, hidden, prng)
        width = hidden[-1] if hidden else obs_dim
        self.mu_head = Dense(store, "enc.mu", width, latent_dim, prng)
        self.sigma_head = Dense(store, "enc.sigma", width, latent_dim, prng)

        if likelihood == "linear_gaussian":
            if decoder_matrix is None:
                raise ContractError("linear_gaussian likelihood needs decoder_matrix")
            self.decoder_matrix = np.asarray(decoder_matrix, dtype=np.float64)
            if self.decoder_matrix.shape != (obs_dim, latent_dim):
                raise ContractError(f"decoder_matrix must be ({obs_dim}, {latent_dim})")
            self.decoder: list[Dense] = []
            self.decoder_out = None
        else:
            self.decoder = _mlp(store, "dec", latent_dim, hidden[::-1], prng)
            width = hidden[0] if hidden else latent_dim
            self.decoder_out = Dense(store, "dec.out", width, obs_dim, prng)
            if likelihood == "discretized_logistic":
                store.add("dec.log_s", np.array([np.log(0.1)]))

        self.context_head = None
        self.l_head = None
        self.nets: list[MadeNetwork] = []
        self.steps: list = []
        if posterior == "iaf":
            if context_dim > 0:
                self.context_head = Dense(store, "enc.h", width_of(self.encoder, obs_dim), context_dim, prng)
            for t in range(iaf_steps):
                net = MadeNetwork(
                    store, f"iaf{t}", latent_dim, made_hidden, prng, context_dim=context_dim, nonlinearity=nonlinearity
                )
                init_forget_bias(net, forget_bias)
                self.nets.append(net)
            self.steps = build_chain(self.nets, iaf_mode, reverse)
        elif posterior == "linear_iaf":
            n = latent_dim * (latent_dim - 1) // 2
            self.l_head = Dense(store, "enc.L", width_of(self.encoder, obs_dim), n, prng, gain=0.1, ddi=False)

    # -- forward pieces ---------------------------------------------------------

    def layers(self) -> list[Dense]:
        out = [*self.encoder, self.mu_head, self.sigma_head]
        if self.context_head is not None:
            out.append(self.context_head)
        if self.l_head is not None:
            out.append(self.l_head)
        for net in self.nets:
            out.extend(net.all_layers())
        out.extend(self.decoder)
        if self.decoder_out is not None:
            out.append(self.decoder_out)
        return out

    def encode(self, x: Tensor) -> Tensor:
        for layer in self.encoder:
            x = T.ew_unary(self.nonlinearity, layer(x))
        return x

    def posterior(self, x: Tensor, eps) -> PosteriorSample:
        hid = self.encode(x)
        mu = self.mu_head(hid)
        sigma = T.softplus(self.sigma_head(hid)) + SIGMA_FLOOR
        h = None if self.context_head is None else self.context_head(hid)
        steps = self.steps
        if self.l_head is not None:
            steps = [LinearIaf(unit_lower_triangular(self.l_head(hid), self.latent_dim))]
        return flow_posterior_sample(BaseGaussianParams(mu, sigma, h), steps, eps)

    def decode(self, z: Tensor) -> Tensor:
        """Decoder output: logits, logistic locations or Gaussian means."""
        if self.likelihood == "linear_gaussian":
            return T.affine(z, self.decoder_matrix.T, np.zeros(self.obs_dim))
        for layer in self.decoder:
            z = T.ew_unary(self.nonlinearity, layer(z))
        return self.decoder_out(z)

    def recon(self, x: Tensor, z: Tensor) -> Tensor:
        out = self.decode(z)
        if self.likelihood == "bernoulli":
            return bernoulli_loglik(x, out)
        if self.likelihood == "discretized_logistic":
            return discretized_logistic_loglik(x, out, x.tape.param(self.store, "dec.log_s"))
        return gaussian_loglik(x, out, self.sigma_obs)

    def decode_mean(self, z: Tensor) -> np.ndarray:
        out = self.decode(z).value
        if self.likelihood == "bernoulli":
            return 1.0 / (1.0 + np.exp(-out))
        if self.likelihood == "discretized_logistic":
            return np.clip(out + 0.5 / 256.0, 0.0, 1.0)
        return out

    # -- objectives -------------------------------------------------------------

    def terms(self, x: Tensor, eps, groups: FreeBitsConfig | None = None) -> ObjectiveTerms:
        return elbo_estimate(x, self.posterior(x, eps), self.recon, groups)

    def loss(self, x: Tensor, eps, free_bits: FreeBitsConfig) -> tuple[Tensor, ObjectiveTerms, Tensor]:
        """Negative free-bits objective, the per-row terms and the objective itself."""
        terms = self.terms(x, eps, free_bits)
        objective = free_bits_objective(terms.recon, terms.group_kls, free_bits)
        return -objective, terms, objective

    def data_init(self, x: np.ndarray, eps: np.ndarray) -> None:
        """Data-dependent initialization of every weight-normalized layer."""
        tape = T.Tape()

        def forward():
            xt = tape.constant(x)
            self.terms(xt, eps)

        data_dependent_init(self.layers(), forward)


def width_of(layers: list[Dense], n_in: int) -> int:
    return layers[-1].n_out if layers else n_in


def _mlp(store: ParamStore, name: str, n_in: int, hidden: list[int], prng) -> list[Dense]:
    layers = []
    for k, width in enumerate(hidden):
        layers.append(Dense(store, f"{name}.{k}", n_in, width, prng))
        n_in = width
    return layers
