"""Run configuration: flat ``key = value`` files with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .flows import IAF_MODES
from .vae import POSTERIORS

EXPERIMENTS = ("toy4", "synth", "mnist", "conjugate1d", "conjugate2d")
LIKELIHOOD_CHOICES = ("bernoulli", "discretized_logistic", "gaussian", "linear_gaussian")


@dataclass
class RunConfig:
    experiment: str = "synth"
    posterior: str = "iaf"
    iaf_steps: int = 2
    made_hidden: int = 32
    made_layers: int = 2
    iaf_mode: str = "gated"
    reverse: bool = True
    lam: float = 0.0
    latent_dim: int = 8
    likelihood: str = "bernoulli"
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 30
    seed: int = 0
    iwae_samples: int = 128
    hidden: list[int] = field(default_factory=lambda: [64])
    context_dim: int = 8
    forget_bias: float = 2.0
    data_init: bool = True
    n_train: int = 2000
    n_test: int = 500
    data_seed: int = 0
    sigma_obs: float = 0.1
    posterior_samples: int = 200
    record_time: bool = False
    train_images: str = ""
    test_images: str = ""
    out: str = "out"

    @property
    def made_hidden_sizes(self) -> list[int]:
        return [self.made_hidden] * self.made_layers


# Per-experiment defaults applied before file values and flags.
EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "toy4": dict(
        latent_dim=2,
        likelihood="gaussian",
        sigma_obs=0.2,
        hidden=[32, 32],
        made_hidden=32,
        context_dim=4,
        n_train=64,
        n_test=4,
        batch=64,
        epochs=2000,
        lr=3e-3,
        iwae_samples=128,
    ),
    "synth": dict(),
    "mnist": dict(latent_dim=32, hidden=[300], made_hidden=320, context_dim=32, batch=100, epochs=10, n_train=60000, n_test=10000),
    "conjugate1d": dict(
        latent_dim=1,
        likelihood="linear_gaussian",
        sigma_obs=1.0,
        posterior="diagonal",
        hidden=[],
        data_init=False,
        n_train=256,
        n_test=1,
        batch=256,
        epochs=4000,
        lr=1e-3,
        context_dim=0,
    ),
    "conjugate2d": dict(
        latent_dim=2,
        likelihood="linear_gaussian",
        sigma_obs=0.5,
        posterior="linear_iaf",
        hidden=[],
        data_init=False,
        n_train=256,
        n_test=1,
        batch=256,
        epochs=4000,
        lr=1e-3,
        context_dim=0,
    ),
}

# config key -> (field name, parser, accepted-range text, validator)
_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError("not finite")
    return value


def _bool(text: str) -> bool:
    return _BOOLS[text.lower()]


def _int_list(text: str) -> list[int]:
    text = text.strip()
    if text in ("", "none", "[]"):
        return []
    return [int(t) for t in text.strip("[]").split(",") if t.strip()]


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(text)
        return text

    return parse


def _at_least(lo):
    return lambda v: v >= lo


def _positive(v) -> bool:
    return v > 0


KEYS: dict[str, tuple[str, object, str, object]] = {
    "experiment": ("experiment", _choice(EXPERIMENTS), "{" + ", ".join(EXPERIMENTS) + "}", None),
    "posterior": ("posterior", _choice(POSTERIORS), "{" + ", ".join(POSTERIORS) + "}", None),
    "iaf_steps": ("iaf_steps", _int, "integer >= 0", _at_least(0)),
    "made_hidden": ("made_hidden", _int, "integer >= 1", _at_least(1)),
    "made_layers": ("made_layers", _int, "integer >= 0", _at_least(0)),
    "iaf_mode": ("iaf_mode", _choice(IAF_MODES), "{" + ", ".join(IAF_MODES) + "}", None),
    "reverse": ("reverse", _bool, "true or false", None),
    "lambda": ("lam", _float, "real >= 0", _at_least(0.0)),
    "latent_dim": ("latent_dim", _int, "integer >= 1", _at_least(1)),
    "likelihood": ("likelihood", _choice(LIKELIHOOD_CHOICES), "{" + ", ".join(LIKELIHOOD_CHOICES) + "}", None),
    "lr": ("lr", _float, "real > 0", _positive),
    "batch": ("batch", _int, "integer >= 1", _at_least(1)),
    "epochs": ("epochs", _int, "integer >= 1", _at_least(1)),
    "seed": ("seed", _int, "integer >= 0", _at_least(0)),
    "iwae_samples": ("iwae_samples", _int, "integer >= 1", _at_least(1)),
    "hidden": ("hidden", _int_list, "comma-separated integers >= 1 (may be empty)", lambda v: all(h >= 1 for h in v)),
    "context_dim": ("context_dim", _int, "integer >= 0", _at_least(0)),
    "forget_bias": ("forget_bias", _float, "real", None),
    "data_init": ("data_init", _bool, "true or false", None),
    "n_train": ("n_train", _int, "integer >= 1", _at_least(1)),
    "n_test": ("n_test", _int, "integer >= 1", _at_least(1)),
    "data_seed": ("data_seed", _int, "integer >= 0", _at_least(0)),
    "sigma_obs": ("sigma_obs", _float, "real > 0", _positive),
    "posterior_samples": ("posterior_samples", _int, "integer >= 1", _at_least(1)),
    "record_time": ("record_time", _bool, "true or false", None),
    "train_images": ("train_images", str, "file path", None),
    "test_images": ("test_images", str, "file path", None),
    "out": ("out", str, "directory path", None),
}


def read_config_file(path) -> dict[str, tuple[str, int]]:
    """Raw ``key -> (value text, line number)`` from a config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key", lineno, ", ".join(KEYS))
        raw[key] = (value, lineno)
    return raw


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then per-experiment defaults, then the file, then ``overrides``."""
    raw = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key", None, ", ".join(KEYS))
        raw[key] = (value, None)
    experiment = _convert("experiment", *raw.get("experiment", ("synth", None)))
    values = dict(EXPERIMENT_DEFAULTS[experiment])
    for key, (text, line) in raw.items():
        values[KEYS[key][0]] = _convert(key, text, line)
    cfg = RunConfig(**values)
    _check_combination(cfg, raw)
    return cfg


def _convert(key: str, text: str, line: int | None):
    _, parse, accepted, valid = KEYS[key]
    try:
        value = parse(text)
    except (ValueError, KeyError):
        raise ConfigError(key, f"malformed value {text!r}", line, accepted) from None
    if valid is not None and not valid(value):
        raise ConfigError(key, f"value {text!r} out of range", line, accepted)
    return value


def _check_combination(cfg: RunConfig, raw) -> None:
    conjugate = cfg.experiment.startswith("conjugate")
    if conjugate and cfg.likelihood != "linear_gaussian":
        raise ConfigError("likelihood", f"{cfg.experiment} fixes the observation model", raw.get("likelihood", (0, None))[1], "linear_gaussian")
    if not conjugate and cfg.likelihood == "linear_gaussian":
        raise ConfigError("likelihood", "linear_gaussian is only available to the conjugate experiments", raw.get("likelihood", (0, None))[1], "bernoulli, discretized_logistic, gaussian")
    if cfg.experiment == "conjugate1d" and cfg.latent_dim != 1:
        raise ConfigError("latent_dim", "conjugate1d has a 1-dimensional latent", raw.get("latent_dim", (0, None))[1], "1")
    if cfg.experiment == "conjugate2d" and cfg.latent_dim != 2:
        raise ConfigError("latent_dim", "conjugate2d has a 2-dimensional latent", raw.get("latent_dim", (0, None))[1], "2")
    if cfg.experiment == "toy4" and cfg.likelihood != "gaussian":
        raise ConfigError("likelihood", "toy4 data are continuous", raw.get("likelihood", (0, None))[1], "gaussian")
    if cfg.experiment == "mnist" and not cfg.train_images:
        raise ConfigError("train_images", "mnist needs an IDX image file", raw.get("train_images", (0, None))[1], "file path")


def config_text(cfg: RunConfig) -> str:
    """Serialize ``cfg`` in the file grammar; parsing it back yields ``cfg``."""
    by_field = {f: k for k, (f, *_rest) in KEYS.items()}
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, list):
            text = ",".join(str(v) for v in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{by_field[f.name]} = {text}")
    return "\n".join(lines) + "\n"
