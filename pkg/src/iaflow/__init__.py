"""Inverse autoregressive flows for variational inference, with brute-force oracles."""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    IaflowError,
    ShapeError,
    TrainingError,
)
from .flows import (
    BaseGaussianParams,
    IafStep,
    LinearIaf,
    Permutation,
    Planar,
    PosteriorSample,
    autoregressive_sample,
    base_sample,
    flow_posterior_sample,
    reverse_perm,
    whiten,
)
from .made import MadeNetwork, build_masks, init_forget_bias
from .prng import Prng
from .tensor import ParamStore, Tape, Tensor, backward
from .vae import VAE

__version__ = "0.1.0"

__all__ = [
    "BaseGaussianParams",
    "ConfigError",
    "ContractError",
    "DomainError",
    "FormatError",
    "IafStep",
    "IaflowError",
    "LinearIaf",
    "MadeNetwork",
    "ParamStore",
    "Permutation",
    "Planar",
    "PosteriorSample",
    "Prng",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainingError",
    "VAE",
    "autoregressive_sample",
    "backward",
    "base_sample",
    "build_masks",
    "flow_posterior_sample",
    "init_forget_bias",
    "reverse_perm",
    "whiten",
]
