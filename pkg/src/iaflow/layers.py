"""Weight-normalized (optionally masked) dense layers and data-dependent init."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DomainError
from .tensor import ParamStore, Tensor

DDI_STD_FLOOR = 1e-8


def weight_norm_apply(v: Tensor, g: Tensor) -> Tensor:
    """Effective weight ``g * v / ||v||`` with the norm taken per output column.

    ``v`` has shape (in, out) and ``g`` shape (out,).
    """
    norms = np.sqrt((v.value * v.value).sum(axis=0))
    if np.any(norms == 0):
        raise DomainError("weight_norm_apply: zero-norm direction vector")
    norm = T.sqrt(T.reduce_sum(T.square(v), axis=0))
    return v * (g / norm)


class Dense:
    """Affine layer ``y = x (W * mask) + b`` with ``W = g v / ||v||``.

    Parameters live in ``store`` under ``<name>.v``, ``<name>.g`` and
    ``<name>.b``. The default initializer draws ``v`` uniformly in
    ``[-1/sqrt(n_in), 1/sqrt(n_in)]`` and sets ``g = gain * ||v||`` so the
    effective weight starts equal to ``gain * v``.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        n_in: int,
        n_out: int,
        prng,
        mask: np.ndarray | None = None,
        gain: float = 1.0,
        ddi: bool = True,
    ):
        self.store = store
        self.name = name
        self.n_in = n_in
        self.n_out = n_out
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        self.ddi = ddi
        self.init_pending = False
        bound = 1.0 / np.sqrt(n_in) if n_in > 0 else 1.0
        v = prng.uniform(-bound, bound, (n_in, n_out))
        store.add(f"{name}.v", v)
        store.add(f"{name}.g", gain * np.sqrt((v * v).sum(axis=0)))
        store.add(f"{name}.b", np.zeros(n_out))

    def weight(self, tape: T.Tape) -> Tensor:
        v = tape.param(self.store, f"{self.name}.v")
        g = tape.param(self.store, f"{self.name}.g")
        return weight_norm_apply(v, g)

    def __call__(self, x: Tensor) -> Tensor:
        if self.init_pending:
            self.init_pending = False
            if self.ddi:
                self.data_init(x.value)
        tape = x.tape
        b = tape.param(self.store, f"{self.name}.b")
        return T.affine(x, self.weight(tape), b, self.mask)

    def data_init(self, x: np.ndarray) -> None:
        """Set gain and bias so pre-activations on ``x`` have zero mean, unit variance."""
        v = self.store[f"{self.name}.v"]
        direction = v / np.sqrt((v * v).sum(axis=0))
        if self.mask is not None:
            direction = direction * self.mask
        t = x @ direction
        mean = t.mean(axis=0)
        std = np.maximum(t.std(axis=0), DDI_STD_FLOOR)
        self.store[f"{self.name}.g"] = 1.0 / std
        self.store[f"{self.name}.b"] = -mean / std


def data_dependent_init(layers, forward) -> None:
    """Initialize ``layers`` in forward order from the activations of ``forward()``.

    Every layer is flagged, then ``forward`` runs once: each flagged layer
    initializes itself from its actual input when first reached, so later
    layers see already-initialized activations.
    """
    layers = list(layers)
    for layer in layers:
        layer.init_pending = True
    try:
        forward()
    finally:
        for layer in layers:
            layer.init_pending = False
