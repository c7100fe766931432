"""Adam, the minibatch training loop, evaluation and checkpoints."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import binarize_dynamic
from .errors import FormatError, TrainingError
from .layers import weight_norm_apply  # noqa: F401  (re-exported)
from .objectives import FreeBitsConfig, log_weights, logmeanexp
from .tensor import ParamStore, Tape, backward

CKPT_HEADER = "iaflow-ckpt v1"


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ParamStore) -> None:
    """Bias-corrected Adam update of every parameter, in place."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, value in params.items():
        g = params.grad(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] = value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainSettings:
    epochs: int = 30
    batch: int = 32
    lr: float = 1e-3
    lam: float = 0.0
    binarize: bool = False
    data_init: bool = True
    data_init_size: int = 256
    iwae_samples: int = 128
    record_time: bool = False
    groups: list | None = None


@dataclass
class EvalResult:
    vlb: float
    logp_iwae: float
    vlb_se: float
    group_kls: np.ndarray
    log_w: np.ndarray = field(repr=False)


@dataclass
class TrainResult:
    metrics: list[dict]
    evaluation: EvalResult | None
    steps: int


METRIC_FIELDS = ("epoch", "step", "elbo", "recon", "kl", "free_bits_obj", "logp_iwae", "seconds")


def _check_finite(store: ParamStore, loss: float, epoch: int, step: int) -> None:
    grads_ok = all(np.all(np.isfinite(store.grad(n))) for n in store)
    if math.isfinite(loss) and grads_ok:
        return
    where = f"non-finite loss/gradient at epoch {epoch}, step {step}"
    for name, value in store.items():
        if not np.all(np.isfinite(value)):
            raise TrainingError(f"{where}; first offending parameter: {name} (non-finite value)")
    for name in store:
        if not np.all(np.isfinite(store.grad(name))):
            raise TrainingError(f"{where}; first offending parameter: {name} (non-finite gradient)")
    raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}; all parameters finite")


def data_dependent_init(model, init_batch: np.ndarray, eps: np.ndarray) -> None:
    """Initialize every weight-normalized layer of ``model`` from ``init_batch``."""
    if init_batch.shape[0] == 0:
        raise ValueError("data_dependent_init: init batch is empty")
    model.data_init(init_batch, eps)


def free_bits_config(model, lam: float, groups=None) -> FreeBitsConfig:
    if groups is None:
        return FreeBitsConfig.per_dimension(lam, model.latent_dim)
    return FreeBitsConfig(lam, groups)


def train(model, train_x: np.ndarray, rngs: dict, settings: TrainSettings, test_x: np.ndarray | None = None) -> TrainResult:
    """Optimize the free-bits objective with Adam.

    ``rngs`` holds independent streams named ``data`` (shuffling,
    binarization), ``noise`` (reparameterization noise) and ``eval``.
    Fresh noise is drawn per datapoint per step.
    """
    data_rng, noise_rng = rngs["data"], rngs["noise"]
    fb = free_bits_config(model, settings.lam, settings.groups)
    n = train_x.shape[0]
    dim = model.latent_dim
    if settings.data_init:
        xb = train_x[: min(n, settings.data_init_size)]
        if settings.binarize:
            xb = binarize_dynamic(xb, data_rng)
        data_dependent_init(model, xb, noise_rng.normal((xb.shape[0], dim)))
    adam = AdamState(lr=settings.lr)
    metrics: list[dict] = []
    step = 0
    start = time.perf_counter()
    for epoch in range(1, settings.epochs + 1):
        order = data_rng.permutation(n)
        sums = np.zeros(4)
        for lo in range(0, n, settings.batch):
            idx = order[lo : lo + settings.batch]
            xb = train_x[idx]
            if settings.binarize:
                xb = binarize_dynamic(xb, data_rng)
            eps = noise_rng.normal((len(idx), dim))
            tape = Tape()
            loss, terms, objective = model.loss(tape.constant(xb), eps, fb)
            backward(tape, loss)
            step += 1
            _check_finite(model.store, float(loss.value), epoch, step)
            adam_step(adam, model.store)
            k = len(idx)
            sums += k * np.array(
                [
                    terms.elbo.value.mean(),
                    terms.recon.value.mean(),
                    float(terms.group_kls.value.sum()),
                    float(objective.value),
                ]
            )
        sums /= n
        metrics.append(
            {
                "epoch": epoch,
                "step": step,
                "elbo": sums[0],
                "recon": sums[1],
                "kl": sums[2],
                "free_bits_obj": sums[3],
                "logp_iwae": float("nan"),
                "seconds": time.perf_counter() - start if settings.record_time else 0.0,
            }
        )
    evaluation = None
    if settings.iwae_samples > 0:
        held_out = train_x if test_x is None else test_x
        evaluation = evaluate(model, held_out, rngs["eval"], settings.iwae_samples, binarize=settings.binarize)
        metrics[-1]["logp_iwae"] = evaluation.logp_iwae
    return TrainResult(metrics, evaluation, step)


def evaluate(model, x: np.ndarray, rng, samples: int, binarize: bool = False, chunk: int = 1000) -> EvalResult:
    """VLB (mean log-weight) and importance-sampled log p(x) from the same draws.

    With ``samples == 1`` both numbers coincide exactly.
    """
    if binarize:
        x = binarize_dynamic(x, rng)
    eps = rng.normal((samples, x.shape[0], model.latent_dim))
    parts = []
    for lo in range(0, x.shape[0], chunk):
        parts.append(log_weights(x[lo : lo + chunk], model.posterior, model.recon, eps[:, lo : lo + chunk]))
    log_w = np.concatenate(parts, axis=1)
    fb = FreeBitsConfig.per_dimension(0.0, model.latent_dim)
    kls = np.zeros(model.latent_dim)
    for s in range(min(samples, 16)):
        tape = Tape()
        terms = model.terms(tape.constant(x), eps[s], fb)
        kls += terms.group_kls.value
    kls /= min(samples, 16)
    flat = log_w.ravel()
    return EvalResult(
        vlb=float(flat.mean()),
        logp_iwae=float(logmeanexp(log_w, axis=0).mean()),
        vlb_se=float(flat.std(ddof=1) / math.sqrt(flat.size)) if flat.size > 1 else 0.0,
        group_kls=kls,
        log_w=log_w,
    )


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, store: ParamStore) -> None:
    lines = [CKPT_HEADER]
    for name, value in store.items():
        dims = ",".join(str(d) for d in value.shape)
        lines.append(f"{name}\t{dims}\t{value.astype('<f8').tobytes().hex()}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    text = Path(path).read_text()
    lines = text.split("\n")
    if not lines or lines[0] != CKPT_HEADER:
        raise FormatError(f"{path}: missing header {CKPT_HEADER!r}")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        name, dims, payload = parts
        try:
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad shape field {dims!r}") from None
        try:
            raw = bytes.fromhex(payload)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad hex payload") from None
        if len(raw) != 8 * int(np.prod(shape)):
            raise FormatError(f"{path}:{lineno}: payload has {len(raw)} bytes for shape {shape}")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return out


def restore(store: ParamStore, values: dict[str, np.ndarray]) -> None:
    missing = set(store.names()) - set(values)
    if missing:
        raise FormatError(f"checkpoint lacks parameters: {sorted(missing)}")
    store.load({k: values[k] for k in store.names()})
