"""Verification suites shared by ``iaflow check`` and the acceptance tests.

Each suite compares library output against a brute-force verifier from
:mod:`iaflow.oracle` and returns a :class:`SuiteResult`. ``scale`` shrinks
the number of random draws for quick runs (1.0 is the full suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import oracle
from .flows import (
    BaseGaussianParams,
    IafStep,
    LinearIaf,
    Permutation,
    Planar,
    autoregressive_sample,
    build_chain,
    flow_posterior_sample,
    gaussian_autoregressive_net,
    log_density,
    whiten,
)
from .made import MadeNetwork
from .objectives import (
    FreeBitsConfig,
    elbo_estimate,
    free_bits_objective,
    gaussian_loglik,
    std_normal_logpdf,
)
from .prng import Prng
from .tensor import ParamStore, Tape, affine, backward
from .vae import VAE


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.cases} cases, worst {self.worst:.3g} vs tolerance {self.tolerance:g}{extra}"


def _count(n: int, scale: float) -> int:
    return max(1, int(round(n * scale)))


def randomize(store: ParamStore, prng: Prng, scale: float = 1.0, names=None) -> None:
    """Overwrite parameters with Gaussian draws; gains get magnitude around ``scale``."""
    for name in names or store.names():
        value = store[name]
        if name.endswith(".g"):
            store[name] = scale * (0.5 + np.abs(prng.normal(value.shape)))
        elif name.endswith(".b"):
            store[name] = scale * prng.normal(value.shape)
        else:
            store[name] = prng.normal(value.shape)


def random_made(dim: int, prng: Prng, context_dim: int = 0, hidden=(8, 8), scale: float = 1.0) -> MadeNetwork:
    store = ParamStore()
    net = MadeNetwork(store, "net", dim, list(hidden), prng, context_dim=context_dim)
    randomize(store, prng, scale)
    return net


def random_unit_lower(dim: int, prng: Prng, scale: float = 1.0) -> np.ndarray:
    return np.eye(dim) + np.tril(scale * prng.normal((dim, dim)), -1)


def _step_map(step, h: np.ndarray | None):
    def fn(points: np.ndarray) -> np.ndarray:
        tape = Tape()
        ht = None if h is None else tape.constant(np.broadcast_to(h, (points.shape[0], h.shape[0])))
        return step(tape.constant(points), ht)[0].value

    return fn


def _analytic_logdet(step, z: np.ndarray, h: np.ndarray | None) -> float:
    tape = Tape()
    ht = None if h is None else tape.constant(h[None, :])
    return -float(step(tape.constant(z[None, :]), ht)[1].value[0])


def logdet_suite(scale: float = 1.0, seed: int = 0, dims=(2, 4, 8)) -> SuiteResult:
    """Analytic log-determinants of every step kind against finite-difference Jacobians."""
    root = Prng(seed)
    draws = _count(100, scale)
    worst, cases, kinds = 0.0, 0, {}
    for dim in dims:
        for rng in root.spawn(draws):
            z = rng.normal(dim)
            h = rng.normal(3)
            steps = {
                "gated": (IafStep(random_made(dim, rng, 3, scale=0.7), "gated"), h),
                "affine": (IafStep(random_made(dim, rng, 3, scale=0.7), "affine"), h),
                "location_only": (IafStep(random_made(dim, rng, 3, scale=0.7), "location_only"), h),
                "planar": (Planar(rng.normal(dim), rng.normal(dim), rng.normal(1)), None),
                "linear_iaf": (LinearIaf(random_unit_lower(dim, rng)), None),
                "permutation": (Permutation(rng.permutation(dim)), None),
            }
            for kind, (step, ctx) in steps.items():
                report = oracle.fd_jacobian_logdet(_step_map(step, ctx), z, analytic=_analytic_logdet(step, z, ctx))
                kinds[kind] = max(kinds.get(kind, 0.0), report.rel_error)
                worst = max(worst, report.rel_error)
                cases += 1
    detail = ", ".join(f"{k} {v:.1e}" for k, v in kinds.items())
    return SuiteResult("logdet", worst < 1e-5, cases, worst, 1e-5, detail)


def random_chain(dim: int, steps: int, rng: Prng, mode: str = "gated"):
    """Base parameters plus an IAF chain with reversals, all with random weights."""
    tape = Tape()
    mu0 = tape.constant(rng.normal((1, dim)))
    sigma0 = tape.constant(np.exp(rng.uniform(-0.5, 0.5, (1, dim))))
    h = tape.constant(rng.normal((1, 3)))
    nets = [random_made(dim, rng, 3, hidden=(6, 6), scale=0.5) for _ in range(steps)]
    return BaseGaussianParams(mu0, sigma0, h), build_chain(nets, mode)


def _sample_chain(base: BaseGaussianParams, chain, eps: np.ndarray) -> np.ndarray:
    n = eps.shape[0]
    tape = Tape()
    dim = base.mu0.shape[1]
    shared = BaseGaussianParams(
        tape.constant(np.broadcast_to(base.mu0.value, (n, dim))),
        tape.constant(np.broadcast_to(base.sigma0.value, (n, dim))),
        None if base.h is None else tape.constant(np.broadcast_to(base.h.value, (n, base.h.shape[1]))),
    )
    return flow_posterior_sample(shared, chain, eps).z.value


def quadrature_box(samples: np.ndarray, sigma0: np.ndarray, width: float = 10.0) -> list[tuple[float, float]]:
    """Per-axis box: sample median plus or minus ``width`` times max(sample std, max sigma0)."""
    centre = np.median(samples, axis=0)
    spread = np.maximum(samples.std(axis=0), float(np.max(sigma0)))
    return [(c - width * s, c + width * s) for c, s in zip(centre, spread)]


def normalization_suite(scale: float = 1.0, seed: int = 1, points: int | None = None) -> SuiteResult:
    """Quadrature of exp(log q) over a box for D in {1, 2} and T in {0, 1, 2, 3}."""
    root = Prng(seed)
    points = points or (2001 if scale >= 1.0 else 801)
    worst, cases, masses = 0.0, 0, []
    reps = _count(2, scale)
    modes = ("gated", "affine")
    for dim in (1, 2):
        for steps in range(4):
            for k, rng in enumerate(root.spawn(reps)):
                base, chain = random_chain(dim, steps, rng, modes[k % 2])
                samples = _sample_chain(base, chain, rng.normal((20000, dim)))
                box = quadrature_box(samples, base.sigma0.value)
                mass = oracle.quadrature_normalize(lambda z: log_density(base, chain, z), box, points)
                masses.append(mass)
                worst = max(worst, abs(mass - 1.0))
                cases += 1
    detail = f"mass range [{min(masses):.6f}, {max(masses):.6f}]"
    return SuiteResult("normalization", worst <= 1e-3, cases, worst, 1e-3, detail)


def roundtrip_suite(scale: float = 1.0, seed: int = 2, max_dim: int = 16) -> SuiteResult:
    """whiten(autoregressive_sample(eps)) recovers eps; also checks the log-det of whiten."""
    root = Prng(seed)
    worst, worst_det, cases = 0.0, 0.0, 0
    for k, rng in enumerate(root.spawn(_count(50, scale))):
        dim = 1 + k % max_dim
        net = random_made(dim, rng, 2, hidden=(16, 16), scale=0.5)
        h = rng.normal((4, 2))
        eps = rng.normal((4, dim))
        y = autoregressive_sample(net, eps, h).y.value
        back, log_det = whiten(net, y, h)
        worst = max(worst, float(np.max(np.abs(back.value - eps))))
        if dim <= 8 and k % 5 == 0:

            def fn(points, h0=h[0]):
                out, _ = whiten(net, points, np.broadcast_to(h0, (points.shape[0], 2)))
                return out.value

            report = oracle.fd_jacobian_logdet(fn, y[0], analytic=float(log_det.value[0]))
            worst_det = max(worst_det, report.rel_error)
        cases += 1
    passed = worst < 1e-10 and worst_det < 1e-6
    return SuiteResult("roundtrip", passed, cases, worst, 1e-10, f"whiten log-det worst {worst_det:.1e}")


def tiny_vae(seed: int) -> tuple[VAE, np.ndarray, np.ndarray]:
    """D=2, T=1 IAF VAE with two hidden units, random weights and a batch of two."""
    rng = Prng(seed)
    model = VAE(4, 2, rng, hidden=(2,), posterior="iaf", iaf_steps=1, made_hidden=(2, 2), context_dim=2)
    randomize(model.store, rng, 1.0)
    x = (rng.uniform(0.0, 1.0, (2, 4)) < 0.5).astype(np.float64)
    eps = rng.normal((2, 2))
    return model, x, eps


def gradient_check(model: VAE, x: np.ndarray, eps: np.ndarray, fb: FreeBitsConfig) -> float:
    def loss() -> float:
        tape = Tape()
        return float(model.loss(tape.constant(x), eps, fb)[0].value)

    tape = Tape()
    value = model.loss(tape.constant(x), eps, fb)[0]
    backward(tape, value)
    numeric = oracle.fd_gradient(loss, model.store)
    return max(oracle.relative_error(model.store.grad(n), numeric[n]) for n in model.store.names())


def gradient_suite(scale: float = 1.0, seeds=range(10), lam: float = 0.1) -> SuiteResult:
    """backward() of the free-bits objective against central differences."""
    worst, cases = 0.0, 0
    for seed in list(seeds)[: _count(len(seeds), scale)]:
        model, x, eps = tiny_vae(seed)
        worst = max(worst, gradient_check(model, x, eps, FreeBitsConfig.per_dimension(lam, 2)))
        cases += 1
    return SuiteResult("gradient", worst < 1e-4, cases, worst, 1e-4, f"lambda {lam}")


def linear_iaf_suite(scale: float = 1.0, seed: int = 3) -> SuiteResult:
    """Linear IAF density against a directly evaluated full-covariance Gaussian pdf.

    Also checks the sequential Gaussian sampler's covariance with moment bands.
    """
    root = Prng(seed)
    worst, cases = 0.0, 0
    for dim in (2, 3):
        for rng in root.spawn(_count(10, scale)):
            mu0 = rng.normal(dim)
            sigma0 = np.exp(rng.uniform(-0.5, 0.5, dim))
            L = random_unit_lower(dim, rng)
            tape = Tape()
            base = BaseGaussianParams(tape.constant(mu0[None]), tape.constant(sigma0[None]))
            z = L @ mu0 + rng.normal((100, dim)) * 2.0
            flow = log_density(base, [LinearIaf(L)], z)
            direct = oracle.mvn_logpdf(z, L @ mu0, L @ np.diag(sigma0**2) @ L.T)
            worst = max(worst, float(np.max(np.abs(flow - direct))))
            cases += z.shape[0]
    rng = Prng(seed + 100)
    A = rng.normal((3, 3))
    cov = A @ A.T + 0.5 * np.eye(3)
    net = gaussian_autoregressive_net(cov)
    moments = oracle.sample_moment_check(lambda n: autoregressive_sample(net, rng.normal((n, 3))).y.value, np.zeros(3), cov)
    passed = worst < 1e-8 and moments.passed
    return SuiteResult("linear-iaf", passed, cases, worst, 1e-8, f"sampler max |z| {moments.max_abs_z:.2f}")


def prior_equivalence_instance(rng: Prng, dim: int = 3, obs: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ELBO of one random instance in z-space and in y-space."""
    mu = rng.normal((1, dim))
    sigma = np.exp(rng.uniform(-0.5, 0.5, (1, dim)))
    L = random_unit_lower(dim, rng, 0.5)
    A = rng.normal((obs, dim))
    x = rng.normal((1, obs))
    eps = rng.normal((8, dim))
    sigma_x = 0.7

    def lik(xt, z):
        return gaussian_loglik(xt, affine(z, A.T, np.zeros(obs)), sigma_x)

    tape = Tape()
    base = BaseGaussianParams(tape.constant(np.repeat(mu, 8, 0)), tape.constant(np.repeat(sigma, 8, 0)))
    sample = flow_posterior_sample(base, [LinearIaf(L)], eps)
    z_space = elbo_estimate(tape.constant(np.repeat(x, 8, 0)), sample, lik).elbo.value

    # y-space: factorized posterior on y, autoregressive Gaussian prior p(y) = N(Ly; 0, I)
    y = mu + sigma * eps
    prior = gaussian_autoregressive_net(np.linalg.inv(L.T @ L))
    white, log_det = whiten(prior, y)
    log_prior_y = std_normal_logpdf(white).value + log_det.value
    log_q_y = np.sum(-np.log(sigma) - 0.5 * eps**2 - 0.5 * math.log(2 * math.pi), axis=1)
    t2 = Tape()
    recon = lik(t2.constant(np.repeat(x, 8, 0)), t2.constant(y @ L.T)).value
    y_space = recon + log_prior_y - log_q_y
    return z_space, y_space


def prior_equivalence_suite(scale: float = 1.0, seed: int = 4) -> SuiteResult:
    """ELBO with linear-IAF posterior and N(0, I) prior equals the y-space ELBO with an autoregressive prior."""
    root = Prng(seed)
    worst, cases = 0.0, 0
    for k, rng in enumerate(root.spawn(_count(100, scale))):
        z_space, y_space = prior_equivalence_instance(rng, dim=2 + k % 3)
        worst = max(worst, float(np.max(np.abs(z_space - y_space))))
        cases += z_space.size
    return SuiteResult("prior-equivalence", worst < 1e-10, cases, worst, 1e-10)


def free_bits_suite(seed: int = 5) -> SuiteResult:
    """Exact identities of the clamped objective."""
    failures = []
    tape = Tape()
    recon = tape.constant(np.array([-3.0, -5.0]))
    kls = tape.variable(np.array([0.2, 0.7]))
    base = free_bits_objective(recon, kls, FreeBitsConfig(0.0, [[0], [1]])).value
    if base != -4.0 - 0.9:
        failures.append("lambda=0 reduction")
    clamped = free_bits_objective(recon, kls, FreeBitsConfig(0.5, [[0], [1]])).value
    if clamped != -4.0 - 1.2:
        failures.append("clamp arithmetic")
    above = free_bits_objective(recon, kls, FreeBitsConfig(0.1, [[0], [1]])).value
    if above != base:
        failures.append("all groups above lambda")
    obj = free_bits_objective(recon, kls, FreeBitsConfig(0.5, [[0], [1]]))
    backward(tape, obj)
    if kls.grad[0] != 0.0 or kls.grad[1] != -1.0:
        failures.append("clamp gradient")
    # on a random model the clamped objective never exceeds the bound, and lambda=0 equals the mean ELBO
    model, x, eps = tiny_vae(seed)
    worst = 0.0
    for lam in (0.0, 0.05, 0.5, 2.0):
        t = Tape()
        _, terms, objective = model.loss(t.constant(x), eps, FreeBitsConfig.per_dimension(lam, 2))
        gap = float(objective.value) - terms.mean_elbo()
        if lam == 0.0:
            worst = max(worst, abs(gap))
        elif gap > 1e-12:
            failures.append(f"objective above bound at lambda {lam}")
    passed = not failures and worst < 1e-12
    return SuiteResult("free-bits", passed, 8, worst, 1e-12, "; ".join(failures))


def made_suite(scale: float = 1.0, seed: int = 6) -> SuiteResult:
    """Perturbing z_j leaves outputs i <= j bit-identical; context reaches every output."""
    root = Prng(seed)
    violations, cases, dead_context = 0, 0, 0
    for k, rng in enumerate(root.spawn(_count(20, scale))):
        dim = 1 + k % 6
        net = random_made(dim, rng, 2, hidden=(7, 5))
        z = rng.normal((1, dim))
        h = rng.normal((1, 2))
        tape = Tape()
        m0, s0 = net(tape.constant(z), tape.constant(h))
        for j in range(dim):
            z2 = z.copy()
            z2[0, j] += 1.0
            m1, s1 = net(tape.constant(z2), tape.constant(h))
            same = slice(0, j + 1)
            if not (np.array_equal(m0.value[0, same], m1.value[0, same]) and np.array_equal(s0.value[0, same], s1.value[0, same])):
                violations += 1
            cases += 1
        m2, s2 = net(tape.constant(z), tape.constant(h + 0.1))
        dead_context += int(np.sum(m2.value == m0.value) + np.sum(s2.value == s0.value))
        reach = net.masks.reachability()
        if np.any(reach[np.tril_indices(dim)]):
            violations += 1
    return SuiteResult("made", violations == 0 and dead_context == 0, cases, float(violations), 0.0, f"context-insensitive outputs {dead_context}")


SUITES = {
    "logdet": logdet_suite,
    "normalization": normalization_suite,
    "roundtrip": roundtrip_suite,
    "gradient": gradient_suite,
    "linear-iaf": linear_iaf_suite,
    "prior-equivalence": prior_equivalence_suite,
    "free-bits": lambda scale=1.0: free_bits_suite(),
    "made": made_suite,
}


def run_all(scale: float = 1.0, only=None) -> list[SuiteResult]:
    names = only or list(SUITES)
    return [SUITES[name](scale=scale) for name in names]
