"""Masked autoregressive networks (MADE) with two output heads and a context input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .layers import Dense
from .tensor import ParamStore, Tensor

NONLINEARITIES = ("elu", "tanh", "softplus", "sigmoid")


@dataclass
class MaskSet:
    """Degrees and binary masks of a MADE.

    Masks are stored as (in, out) matrices, matching ``affine``'s weight
    layout: ``hidden[k][j, i] == 1`` connects input unit j to unit i. The
    single ``output`` mask is shared by the m-head and the s-head.
    """

    input_degrees: np.ndarray
    hidden_degrees: list[np.ndarray]
    output_degrees: np.ndarray
    hidden: list[np.ndarray]
    output: np.ndarray

    def reachability(self) -> np.ndarray:
        """Boolean (D, D) matrix: entry [j, i] is True if input j can reach output i."""
        reach = np.eye(len(self.input_degrees))
        for m in self.hidden:
            reach = (reach @ m > 0).astype(float)
        return (reach @ self.output) > 0


def build_masks(dim: int, hidden_sizes) -> MaskSet:
    if dim < 1:
        raise ContractError(f"build_masks: dimension must be >= 1, got {dim}")
    hidden_sizes = list(hidden_sizes)
    if any(h < 1 for h in hidden_sizes):
        raise ContractError(f"build_masks: hidden sizes must be >= 1, got {hidden_sizes}")
    inputs = np.arange(1, dim + 1)
    cycle = max(dim - 1, 1)
    hidden_degrees = [np.arange(h) % cycle + 1 for h in hidden_sizes]
    masks = []
    prev = inputs
    for deg in hidden_degrees:
        masks.append((deg[None, :] >= prev[:, None]).astype(np.float64))
        prev = deg
    outputs = np.arange(1, dim + 1)
    output = (outputs[None, :] > prev[:, None]).astype(np.float64)
    return MaskSet(inputs, hidden_degrees, outputs, masks, output)


class MadeNetwork:
    """Autoregressive network ``(z, h) -> (m, s)``.

    ``m[:, i]`` and ``s[:, i]`` depend on ``z[:, :i]`` only. The context
    ``h`` is an unmasked input of the first hidden layer and of the two
    heads; the head connection is what lets the first output (which sees
    no hidden unit) depend on ``h``.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        dim: int,
        hidden_sizes,
        prng,
        context_dim: int = 0,
        nonlinearity: str = "elu",
        head_gain: float = 0.1,
    ):
        if nonlinearity not in NONLINEARITIES:
            raise ContractError(f"unknown nonlinearity {nonlinearity!r}")
        self.store = store
        self.name = name
        self.dim = dim
        self.context_dim = context_dim
        self.nonlinearity = nonlinearity
        self.masks = build_masks(dim, hidden_sizes)
        self.layers: list[Dense] = []
        for k, mask in enumerate(self.masks.hidden):
            if k == 0:
                mask = _with_context(mask, context_dim)
            self.layers.append(Dense(store, f"{name}.h{k}", mask.shape[0], mask.shape[1], prng, mask=mask))
        out_mask = _with_context(self.masks.output, context_dim)
        n_in = out_mask.shape[0]
        self.m_head = Dense(store, f"{name}.m", n_in, dim, prng, mask=out_mask, gain=head_gain, ddi=False)
        self.s_head = Dense(store, f"{name}.s", n_in, dim, prng, mask=out_mask, gain=head_gain, ddi=False)

    def __call__(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        return made_forward(self, z, h)

    def all_layers(self) -> list[Dense]:
        return [*self.layers, self.m_head, self.s_head]

    def set_zero_weights(self) -> None:
        """Zero every effective weight (gains to 0); biases are kept."""
        for layer in self.all_layers():
            self.store[f"{layer.name}.g"] = np.zeros(layer.n_out)


def _with_context(mask: np.ndarray, context_dim: int) -> np.ndarray:
    if context_dim == 0:
        return mask
    return np.vstack([mask, np.ones((context_dim, mask.shape[1]))])


def made_forward(net: MadeNetwork, z: Tensor, h: Tensor | None = None):
    if z.ndim != 2 or z.shape[1] != net.dim:
        raise ShapeError(f"made_forward: z has shape {z.shape}, expected (batch, {net.dim})")
    x = z
    if net.context_dim:
        if h is None or h.ndim != 2 or h.shape != (z.shape[0], net.context_dim):
            got = None if h is None else h.shape
            raise ShapeError(f"made_forward: context has shape {got}, expected ({z.shape[0]}, {net.context_dim})")
        x = T.concat([z, h], axis=1)
    elif h is not None and h.shape[-1] != 0:
        raise ShapeError(f"made_forward: network takes no context, got shape {h.shape}")
    for layer in net.layers:
        x = T.ew_unary(net.nonlinearity, layer(x))
    if net.context_dim and net.layers:
        x = T.concat([x, h], axis=1)
    return net.m_head(x), net.s_head(x)


def init_forget_bias(net: MadeNetwork, target_s: float = 2.0) -> None:
    """Set the s-head bias so the initial gate is ``sigmoid(target_s)``."""
    net.store[f"{net.s_head.name}.b"] = np.full(net.dim, float(target_s))
