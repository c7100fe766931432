"""Flow steps with exact log-determinant accounting.

All functions work on row batches: ``z`` has shape (batch, D) and every
``delta_log_q`` / ``log_q`` has shape (batch,). A step's ``delta_log_q`` is
its contribution to ``log q``, i.e. minus the log absolute Jacobian
determinant of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError, ShapeError
from .made import MadeNetwork
from .prng import Prng
from .tensor import ParamStore, Tape, Tensor

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-4
IAF_MODES = ("gated", "affine", "location_only")
PLANAR_SHIFT = math.log(math.e - 1.0)  # softplus(PLANAR_SHIFT) = 1


def as_tensor(x, tape: Tape | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return (tape or Tape()).constant(x)


@dataclass
class BaseGaussianParams:
    mu0: Tensor
    sigma0: Tensor
    h: Tensor | None = None


@dataclass
class PosteriorSample:
    """Final iterate ``z``, its base noise and the accumulated ``log q(z|x)``.

    ``log_q_dims`` splits ``log_q`` over the final coordinates of ``z``; the
    split is exact for chains of IAF steps and permutations.
    """

    z: Tensor
    eps: Tensor
    log_q: Tensor
    log_q_dims: Tensor


@dataclass
class AutoregressiveSampleResult:
    y: Tensor


def _base_dims(params: BaseGaussianParams, eps) -> tuple[Tensor, Tensor, Tensor]:
    mu0, sigma0 = params.mu0, params.sigma0
    if np.any(sigma0.value <= 0):
        raise DomainError("base_sample: sigma0 must be strictly positive")
    if not isinstance(eps, Tensor) or eps.tape is not mu0.tape:
        eps = mu0.tape.constant(getattr(eps, "value", eps))
    if eps.shape[-1] != mu0.shape[-1]:
        raise ShapeError(f"base_sample: eps {eps.shape} vs mu0 {mu0.shape}")
    z0 = mu0 + sigma0 * eps
    dims = -(T.log(sigma0) + 0.5 * T.square(eps) + 0.5 * LOG_2PI)
    return z0, dims, eps


def base_sample(params: BaseGaussianParams, eps) -> tuple[Tensor, Tensor]:
    z0, dims, _ = _base_dims(params, eps)
    return z0, T.reduce_sum(dims, axis=-1)


def _bind(x: Tensor, tape: Tape) -> Tensor:
    """``x`` on ``tape``; a tensor from another tape enters as a constant."""
    return x if x.tape is tape else tape.constant(x.value)


def _zeros_like(z: Tensor) -> Tensor:
    return z.tape.constant(np.zeros(z.shape))


def _net_outputs(net: MadeNetwork, z: np.ndarray, h: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    tape = Tape()
    ht = None if h is None else tape.constant(np.broadcast_to(h, (z.shape[0], np.shape(h)[-1])))
    m, s = net(tape.constant(z), ht)
    return m.value, s.value


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class IafStep:
    """One inverse autoregressive flow step driven by a MADE.

    Modes: ``gated`` (sigma = sigmoid(s), z = sigma z + (1 - sigma) m),
    ``affine`` (sigma = softplus(s) + 1e-4, z = m + sigma z) and
    ``location_only`` (z = z + m, volume preserving).
    """

    def __init__(self, net: MadeNetwork, mode: str = "gated"):
        if mode not in IAF_MODES:
            raise ContractError(f"unknown IAF mode {mode!r}; expected one of {IAF_MODES}")
        self.net = net
        self.mode = mode

    def transform(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        m, s = self.net(z, h)
        if self.mode == "gated":
            gate = T.sigmoid(s)
            # -log sigmoid(s) = softplus(-s), stable for very negative s
            return gate * z + (1.0 - gate) * m, T.softplus(-s)
        if self.mode == "affine":
            sigma = T.softplus(s) + SIGMA_FLOOR
            return m + sigma * z, -T.log(sigma)
        return z + m, _zeros_like(z)

    def __call__(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z, d = self.transform(z, h)
        return z, T.reduce_sum(d, axis=-1)

    def inverse(self, z: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
        """Sequential inverse: D network evaluations."""
        x = np.zeros_like(z)
        for i in range(z.shape[1]):
            m, s = _net_outputs(self.net, x, h)
            if self.mode == "gated":
                g = _sigmoid(s[:, i])
                x[:, i] = (z[:, i] - (1.0 - g) * m[:, i]) / g
            elif self.mode == "affine":
                x[:, i] = (z[:, i] - m[:, i]) / (_softplus(s[:, i]) + SIGMA_FLOOR)
            else:
                x[:, i] = z[:, i] - m[:, i]
        return x


class Permutation:
    """Reorders coordinates; contributes exactly zero to log q."""

    def __init__(self, order):
        order = np.asarray(order, dtype=np.int64)
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(len(order))):
            raise ContractError(f"Permutation: {order.tolist()} is not a bijection of 0..D-1")
        self.order = order

    def transform(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        return z[:, self.order], _zeros_like(z)

    def __call__(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z, d = self.transform(z, h)
        return z, T.reduce_sum(d, axis=-1)

    def inverse(self, z: np.ndarray, h=None) -> np.ndarray:
        return z[:, np.argsort(self.order)]


def reverse_perm(dim: int) -> Permutation:
    if dim < 1:
        raise ContractError(f"reverse_perm: dimension must be >= 1, got {dim}")
    return Permutation(np.arange(dim)[::-1])


class Planar:
    """Planar step ``z + u_hat tanh(w.z + b)``.

    ``u`` is reparameterized to
    ``u_hat = u + (softplus(w.u + c) - 1 - w.u) w / |w|^2`` with
    ``c = log(e - 1)``, so that ``w.u_hat > -1`` keeps the map invertible
    while ``u = 0`` still gives the identity. ``u`` and ``w``
    have shape (D,), ``b`` is a scalar (or shape (1,)).
    """

    def __init__(self, u, w, b):
        tape = next((x.tape for x in (u, w, b) if isinstance(x, Tensor)), None) or Tape()
        self.u = as_tensor(u, tape)
        self.w = as_tensor(w, tape)
        self.b = T.reshape(as_tensor(b, tape), (1,))
        if self.u.shape != self.w.shape or self.u.ndim != 1:
            raise ShapeError(f"Planar: u {self.u.shape} and w {self.w.shape} must be equal 1-D shapes")

    def u_hat(self, tape: Tape | None = None) -> Tensor:
        tape = tape or self.u.tape
        u, w = _bind(self.u, tape), _bind(self.w, tape)
        if not np.any(w.value):
            return u
        wu = T.reduce_sum(w * u)
        w_sq = T.reduce_sum(T.square(w))
        return u + (T.softplus(wu + PLANAR_SHIFT) - 1.0 - wu) / w_sq * w

    def transform(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        dim = self.w.shape[0]
        w, b = _bind(self.w, z.tape), _bind(self.b, z.tape)
        u_hat = self.u_hat(z.tape)
        act = T.tanh(T.affine(z, T.reshape(w, (dim, 1)), b))
        z_new = z + act * u_hat
        det = 1.0 + (1.0 - T.square(act)) * T.reduce_sum(u_hat * w)
        delta = -T.log(det)
        # not separable per coordinate; spread evenly
        return z_new, delta * np.full(dim, 1.0 / dim)

    def __call__(self, z: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z, d = self.transform(z, h)
        return z, T.reduce_sum(d, axis=-1)

    def inverse(self, z: np.ndarray, h=None, iters: int = 200) -> np.ndarray:
        u_hat = self.u_hat().value
        w, b = self.w.value, float(self.b.value[0])
        wu = float(w @ u_hat)
        target = z @ w
        # f(a) = a + wu tanh(a + b) is increasing since wu >= -1
        span = abs(wu) + 1.0
        lo, hi = target - span, target + span
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            too_big = mid + wu * np.tanh(mid + b) > target
            hi = np.where(too_big, mid, hi)
            lo = np.where(too_big, lo, mid)
        a = 0.5 * (lo + hi)
        return z - np.tanh(a + b)[:, None] * u_hat


class LinearIaf:
    """``z = L y`` with L unit lower triangular: volume preserving.

    ``L`` is (D, D) or a batch (batch, D, D).
    """

    def __init__(self, L):
        self.L = as_tensor(L)
        v = self.L.value
        if v.ndim not in (2, 3) or v.shape[-1] != v.shape[-2]:
            raise ShapeError(f"LinearIaf: L must be square (or a batch of squares), got {v.shape}")
        dim = v.shape[-1]
        if np.any(np.triu(v, 1) != 0) or np.any(np.diagonal(v, axis1=-2, axis2=-1) != 1.0):
            raise ContractError("LinearIaf: L must be lower triangular with unit diagonal")
        self.dim = dim

    def transform(self, y: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        return T.matvec(_bind(self.L, y.tape), y), _zeros_like(y)

    def __call__(self, y: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        z, d = self.transform(y, h)
        return z, T.reduce_sum(d, axis=-1)

    def inverse(self, z: np.ndarray, h=None) -> np.ndarray:
        L = self.L.value
        if L.ndim == 2:
            return np.linalg.solve(L, z.T).T
        return np.linalg.solve(L, z[:, :, None])[:, :, 0]


def unit_lower_triangular(entries: Tensor, dim: int) -> Tensor:
    """Build a (batch, D, D) unit lower-triangular matrix from (batch, D(D-1)/2) entries."""
    rows, cols = np.tril_indices(dim, -1)
    k = len(rows)
    if entries.shape[-1] != k:
        raise ShapeError(f"unit_lower_triangular: expected {k} entries, got {entries.shape[-1]}")
    scatter = np.zeros((k, dim * dim))
    scatter[np.arange(k), rows * dim + cols] = 1.0
    flat = T.affine(entries, scatter, np.eye(dim).ravel())
    return T.reshape(flat, (entries.shape[0], dim, dim))


def iaf_step(step: IafStep, z_prev: Tensor, h: Tensor | None = None):
    return step(z_prev, h)


def planar_step(step: Planar, z: Tensor):
    return step(z)


def linear_iaf(step: LinearIaf, y: Tensor):
    return step(y)


def build_chain(nets, mode: str = "gated", reverse: bool = True) -> list:
    """IAF steps with an order reversal between consecutive steps."""
    steps: list = []
    for t, net in enumerate(nets):
        if t > 0 and reverse:
            steps.append(reverse_perm(net.dim))
        steps.append(IafStep(net, mode))
    return steps


def flow_posterior_sample(base: BaseGaussianParams, steps, eps) -> PosteriorSample:
    z, dims, eps = _base_dims(base, eps)
    log_q = T.reduce_sum(dims, axis=-1)
    for step in steps:
        z, d = step.transform(z, base.h)
        if isinstance(step, Permutation):
            dims = dims[:, step.order]
        else:
            dims = dims + d
            log_q = log_q + T.reduce_sum(d, axis=-1)
    return PosteriorSample(z, eps, log_q, dims)


def log_density(base: BaseGaussianParams, steps, z: np.ndarray) -> np.ndarray:
    """``log q`` at arbitrary points ``z`` by inverting the chain.

    Base parameters and context must be shared across rows.
    """
    h = None if base.h is None else np.reshape(base.h.value, (-1,))
    x = np.asarray(z, dtype=np.float64)
    for step in reversed(steps):
        x = step.inverse(x, h)
    mu0 = np.reshape(base.mu0.value, (1, -1))
    sigma0 = np.reshape(base.sigma0.value, (1, -1))
    eps = (x - mu0) / sigma0
    tape = Tape()
    hb = None if h is None else tape.constant(np.broadcast_to(h, (x.shape[0], h.shape[0])))
    shared = BaseGaussianParams(tape.constant(mu0), tape.constant(sigma0), hb)
    return flow_posterior_sample(shared, steps, eps).log_q.value


def autoregressive_sample(net: MadeNetwork, eps, h=None) -> AutoregressiveSampleResult:
    """Sequential sampler ``y_i = mu_i(y_<i) + sigma_i(y_<i) eps_i``.

    Uses one network evaluation per dimension, which is why this direction
    is reserved for generation and never used inside inference.
    """
    eps = as_tensor(eps)
    tape = eps.tape
    h = None if h is None else as_tensor(h, tape)
    batch, dim = eps.shape
    cols: list[Tensor] = []
    for i in range(dim):
        pad = tape.constant(np.zeros((batch, dim - i)))
        y = T.concat([*cols, pad], axis=1) if cols else pad
        m, s = net(y, h)
        sigma = T.softplus(s[:, i : i + 1]) + SIGMA_FLOOR
        cols.append(m[:, i : i + 1] + sigma * eps[:, i : i + 1])
    return AutoregressiveSampleResult(T.concat(cols, axis=1))


def whiten(net: MadeNetwork, y, h=None) -> tuple[Tensor, Tensor]:
    """Parallel inverse ``eps = (y - mu(y)) / sigma(y)`` and ``-sum log sigma(y)``."""
    y = as_tensor(y)
    h = None if h is None else as_tensor(h, y.tape)
    m, s = net(y, h)
    sigma = T.softplus(s) + SIGMA_FLOOR
    return (y - m) / sigma, T.reduce_sum(-T.log(sigma), axis=-1)


def gaussian_autoregressive_net(cov, mean=None, prng: Prng | None = None) -> MadeNetwork:
    """Linear MADE whose sequential sampler draws from N(mean, cov).

    mu_i is the conditional mean given the preceding coordinates and
    sigma_i the conditional standard deviation (square root of the Schur
    complement), mapped back through the softplus head.
    """
    cov = np.asarray(cov, dtype=np.float64)
    dim = cov.shape[0]
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
    store = ParamStore()
    net = MadeNetwork(store, "gauss", dim, [], prng or Prng(0))
    coef = np.zeros((dim, dim))
    sigma = np.empty(dim)
    bias = np.empty(dim)
    for i in range(dim):
        if i == 0:
            sigma[0] = math.sqrt(cov[0, 0])
            bias[0] = mean[0]
            continue
        a = np.linalg.solve(cov[:i, :i], cov[:i, i])
        coef[:i, i] = a
        sigma[i] = math.sqrt(cov[i, i] - cov[i, :i] @ a)
        bias[i] = mean[i] - a @ mean[:i]
    mask = net.masks.output
    v = np.where(mask > 0, coef, 1.0)
    store["gauss.m.v"] = v
    store["gauss.m.g"] = np.sqrt((v * v).sum(axis=0))
    store["gauss.m.b"] = bias
    store["gauss.s.g"] = np.zeros(dim)
    store["gauss.s.b"] = np.log(np.expm1(sigma - SIGMA_FLOOR))
    return net
