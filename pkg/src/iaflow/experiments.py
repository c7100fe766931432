"""Datasets, models and training runs for each configured experiment."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import oracle
from .config import RunConfig
from .data import Dataset, gen_synthetic_digits, gen_toy4, idx_load
from .prng import Prng, streams
from .tensor import Tape
from .trainer import EvalResult, TrainResult, TrainSettings, evaluate, train
from .vae import VAE

# Fixed decoders of the conjugate models, x ~ N(A z, sigma_obs^2 I).
CONJUGATE_MATRICES = {
    "conjugate1d": np.array([[1.0]]),
    "conjugate2d": np.array([[1.0, -1.0]]),
}


@dataclass
class ExperimentData:
    train: Dataset
    test: Dataset
    binarize: bool
    decoder_matrix: np.ndarray | None = None


def conjugate_marginal_cov(cfg: RunConfig) -> np.ndarray:
    A = CONJUGATE_MATRICES[cfg.experiment]
    return A @ A.T + cfg.sigma_obs**2 * np.eye(A.shape[0])


def conjugate_logp(cfg: RunConfig, x: np.ndarray) -> np.ndarray:
    """Analytic log p(x) of a conjugate model, via the oracle's Gaussian pdf."""
    cov = conjugate_marginal_cov(cfg)
    return oracle.mvn_logpdf(x, np.zeros(cov.shape[0]), cov)


def conjugate_posterior(cfg: RunConfig, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean (rows) and shared covariance of a conjugate model."""
    A = CONJUGATE_MATRICES[cfg.experiment]
    precision = np.eye(A.shape[1]) + A.T @ A / cfg.sigma_obs**2
    cov = np.linalg.inv(precision)
    return np.asarray(x) @ A @ cov.T / cfg.sigma_obs**2, cov


def load_data(cfg: RunConfig) -> ExperimentData:
    if cfg.experiment == "toy4":
        points = gen_toy4()
        copies = max(1, cfg.n_train // len(points))
        train_set = Dataset(np.tile(points.items, (copies, 1)), points.name, points.grid)
        return ExperimentData(train_set, points, binarize=False)
    if cfg.experiment == "synth":
        train_set = gen_synthetic_digits(cfg.n_train, 2 * cfg.data_seed)
        test_set = gen_synthetic_digits(cfg.n_test, 2 * cfg.data_seed + 1)
        return ExperimentData(train_set, test_set, binarize=cfg.likelihood == "bernoulli")
    if cfg.experiment == "mnist":
        train_set = idx_load(cfg.train_images)
        test_set = idx_load(cfg.test_images) if cfg.test_images else train_set
        train_set = dataclasses.replace(train_set, items=train_set.items[: cfg.n_train])
        test_set = dataclasses.replace(test_set, items=test_set.items[: cfg.n_test])
        return ExperimentData(train_set, test_set, binarize=cfg.likelihood == "bernoulli")
    A = CONJUGATE_MATRICES[cfg.experiment]
    rng = Prng(cfg.data_seed)
    cov = conjugate_marginal_cov(cfg)
    x = rng.normal((cfg.n_test, A.shape[0])) @ np.linalg.cholesky(cov).T
    points = Dataset(x, cfg.experiment, "continuous")
    copies = max(1, cfg.n_train // cfg.n_test)
    train_set = Dataset(np.tile(x, (copies, 1)), cfg.experiment, "continuous")
    return ExperimentData(train_set, points, binarize=False, decoder_matrix=A)


def build_model(cfg: RunConfig, data: ExperimentData, prng: Prng) -> VAE:
    return VAE(
        data.train.dim,
        cfg.latent_dim,
        prng,
        hidden=cfg.hidden,
        posterior=cfg.posterior,
        iaf_steps=cfg.iaf_steps,
        made_hidden=cfg.made_hidden_sizes,
        iaf_mode=cfg.iaf_mode,
        context_dim=cfg.context_dim,
        likelihood=cfg.likelihood,
        sigma_obs=cfg.sigma_obs,
        forget_bias=cfg.forget_bias,
        decoder_matrix=data.decoder_matrix,
        reverse=cfg.reverse,
    )


def settings_from(cfg: RunConfig, binarize: bool) -> TrainSettings:
    return TrainSettings(
        epochs=cfg.epochs,
        batch=cfg.batch,
        lr=cfg.lr,
        lam=cfg.lam,
        binarize=binarize,
        data_init=cfg.data_init,
        iwae_samples=cfg.iwae_samples,
        record_time=cfg.record_time,
    )


@dataclass
class RunOutput:
    cfg: RunConfig
    model: VAE
    data: ExperimentData
    result: TrainResult

    @property
    def evaluation(self) -> EvalResult:
        return self.result.evaluation


def run_training(cfg: RunConfig) -> RunOutput:
    """Train one model as configured; evaluation runs on the test split."""
    data = load_data(cfg)
    rngs = streams(cfg.seed)
    model = build_model(cfg, data, rngs["init"])
    result = train(model, data.train.items, rngs, settings_from(cfg, data.binarize), data.test.items)
    return RunOutput(cfg, model, data, result)


def posterior_draws(model: VAE, x: np.ndarray, samples: int, prng: Prng) -> np.ndarray:
    """(points, samples, D) draws from q(z|x) for each row of ``x``."""
    out = np.empty((x.shape[0], samples, model.latent_dim))
    for p in range(x.shape[0]):
        tape = Tape()
        rows = tape.constant(np.repeat(x[p : p + 1], samples, axis=0))
        out[p] = model.posterior(rows, prng.normal((samples, model.latent_dim))).z.value
    return out


@dataclass
class ToyOutput:
    run: RunOutput
    draws: np.ndarray
    final_elbo: float
    w2: float


def toy_variant(cfg: RunConfig, posterior: str) -> ToyOutput:
    """Train one posterior family on the toy set and draw from its posteriors.

    ``final_elbo`` is the held-out VLB of the trained model on the four
    points and ``w2`` the Gaussian 2-Wasserstein distance between the
    aggregate of all posterior draws and the prior.
    """
    run = run_training(dataclasses.replace(cfg, posterior=posterior))
    draws = posterior_draws(run.model, run.data.test.items, cfg.posterior_samples, streams(cfg.seed)["eval"].spawn(1)[0])
    w2 = oracle.gaussian_w2_to_standard(draws.reshape(-1, cfg.latent_dim))
    return ToyOutput(run, draws, run.evaluation.vlb, w2)


def evaluate_model(cfg: RunConfig, model: VAE, data: ExperimentData, samples: int | None = None) -> EvalResult:
    return evaluate(model, data.test.items, streams(cfg.seed)["eval"], samples or cfg.iwae_samples, binarize=data.binarize)
