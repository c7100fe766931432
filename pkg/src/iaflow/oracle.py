"""Brute-force verifiers.

Nothing here reuses the analytic code paths it checks: Jacobians come from
central differences, determinants from a local LU factorization, densities
from trapezoidal quadrature and Gaussian pdfs from their textbook formulas.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

FD_STEP = 1e-5


@dataclass
class JacobianReport:
    jacobian: np.ndarray
    logdet: float
    analytic: float | None
    rel_error: float
    singular: bool = False


def lu_logabsdet(a: np.ndarray) -> tuple[float, bool]:
    """log|det a| by Doolittle LU with partial pivoting; (-inf, True) if singular."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    total = 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            return -math.inf, True
        if p != k:
            a[[k, p]] = a[[p, k]]
        pivot = a[k, k]
        total += math.log(abs(pivot))
        if k + 1 < n:
            factors = a[k + 1 :, k] / pivot
            a[k + 1 :, k:] -= np.outer(factors, a[k, k:])
    return total, False


def fd_jacobian(fn: Callable, point: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of a row-wise map ``fn: (n, D) -> (n, D)``.

    All 2D perturbed points are evaluated in one call. Entry [i, j] is
    d out_i / d in_j.
    """
    point = np.asarray(point, dtype=np.float64).ravel()
    dim = point.size
    offsets = np.eye(dim) * step
    probes = np.vstack([point + offsets, point - offsets])
    out = np.asarray(fn(probes), dtype=np.float64)
    return ((out[:dim] - out[dim:]) / (2.0 * step)).T


def fd_jacobian_logdet(fn: Callable, point, step: float = FD_STEP, analytic: float | None = None) -> JacobianReport:
    if np.size(point) > 16:
        raise ValueError("fd_jacobian_logdet: dimension above 16 is not supported")
    jac = fd_jacobian(fn, point, step)
    logdet, singular = lu_logabsdet(jac)
    if analytic is None or singular:
        err = math.inf if singular and analytic is not None else 0.0
    else:
        err = abs(analytic - logdet) / max(1.0, abs(logdet))
    return JacobianReport(jac, logdet, analytic, err, singular)


def fd_gradient(loss: Callable[[], float], store, step: float = FD_STEP, names=None) -> dict[str, np.ndarray]:
    """Central differences of ``loss()`` with respect to each scalar in ``store``.

    ``loss`` must read the store's current values; each entry is perturbed
    and restored in turn.
    """
    grads = {}
    for name in names or store.names():
        base = store[name].copy()
        g = np.zeros_like(base)
        flat = base.ravel()
        for k in range(flat.size):
            probe = flat.copy()
            probe[k] = flat[k] + step
            store[name] = probe.reshape(base.shape)
            up = loss()
            probe[k] = flat[k] - step
            store[name] = probe.reshape(base.shape)
            down = loss()
            g.ravel()[k] = (up - down) / (2.0 * step)
        store[name] = base
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|) elementwise."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def _trapezoid_weights(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(lo, hi, n)
    w = np.full(n, (hi - lo) / (n - 1))
    w[0] = w[-1] = 0.5 * w[0]
    return xs, w


def quadrature_normalize(log_density: Callable, box, points: int = 2001, chunk: int = 250_000) -> float:
    """Trapezoidal integral of ``exp(log_density)`` over an axis-aligned box (D = 1 or 2)."""
    box = [tuple(map(float, b)) for b in box]
    if len(box) == 1:
        xs, w = _trapezoid_weights(points, *box[0])
        return float(np.sum(w * np.exp(log_density(xs[:, None]))))
    if len(box) != 2:
        raise ValueError("quadrature_normalize supports D in {1, 2}")
    xs, wx = _trapezoid_weights(points, *box[0])
    ys, wy = _trapezoid_weights(points, *box[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    weights = np.outer(wx, wy).ravel()
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    total = 0.0
    for lo in range(0, grid.shape[0], chunk):
        vals = log_density(grid[lo : lo + chunk])
        total += float(np.sum(weights[lo : lo + chunk] * np.exp(vals)))
    return total


def diag_gaussian_logpdf(z, mu, sigma) -> np.ndarray:
    """Product of univariate normal pdfs, formed as densities then logged."""
    z, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (z, mu, sigma))
    pdf = np.exp(-((z - mu) ** 2) / (2.0 * sigma**2)) / (sigma * math.sqrt(2.0 * math.pi))
    return np.sum(np.log(pdf), axis=-1)


def cholesky(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    L = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j] - L[i, :j] @ L[j, :j]
            L[i, j] = math.sqrt(s) if i == j else s / L[j, j]
    return L


def forward_substitute(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L x = b`` for lower-triangular L; b is (D,) or (D, k)."""
    b = np.array(b, dtype=np.float64)
    x = np.zeros_like(b)
    for i in range(L.shape[0]):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def mvn_logpdf(x, mean, cov) -> np.ndarray:
    """Full-covariance Gaussian log-density via a Cholesky factor and triangular solve."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = np.asarray(mean, dtype=np.float64)
    L = cholesky(cov)
    dim = L.shape[0]
    r = forward_substitute(L, (x - mean).T)
    maha = np.sum(r * r, axis=0)
    return -0.5 * maha - np.sum(np.log(np.diag(L))) - 0.5 * dim * math.log(2.0 * math.pi)


@dataclass
class MomentReport:
    passed: bool
    mean_z: np.ndarray
    cov_z: np.ndarray
    max_abs_z: float


def sample_moment_check(sampler: Callable[[int], np.ndarray], mean, cov, n: int = 100_000, bound: float = 3.0) -> MomentReport:
    """Compare empirical mean and covariance with targets using standard-error bands.

    Standard errors assume Gaussian draws: se(mean_i) = sqrt(C_ii / n) and
    se(C_ij) = sqrt((C_ii C_jj + C_ij^2) / n).
    """
    if n < 10_000:
        raise ValueError("sample_moment_check needs at least 10^4 draws")
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    x = np.asarray(sampler(n), dtype=np.float64)
    emp_mean = x.mean(axis=0)
    emp_cov = np.cov(x, rowvar=False).reshape(cov.shape)
    d = np.diag(cov)
    mean_z = (emp_mean - mean) / np.sqrt(d / n)
    cov_se = np.sqrt((np.outer(d, d) + cov**2) / n)
    cov_z = (emp_cov - cov) / cov_se
    worst = float(max(np.max(np.abs(mean_z)), np.max(np.abs(cov_z))))
    return MomentReport(worst <= bound, mean_z, cov_z, worst)


def gaussian_w2_to_standard(samples: np.ndarray) -> float:
    """2-Wasserstein distance between N(m, C) fitted to ``samples`` and N(0, I)."""
    samples = np.asarray(samples, dtype=np.float64)
    m = samples.mean(axis=0)
    C = np.atleast_2d(np.cov(samples, rowvar=False))
    vals, vecs = np.linalg.eigh(C)
    root_trace = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    dim = C.shape[0]
    w2_sq = float(m @ m + np.trace(C) + dim - 2.0 * root_trace)
    return math.sqrt(max(w2_sq, 0.0))
