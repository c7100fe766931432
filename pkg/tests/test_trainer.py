from __future__ import annotations

import numpy as np
import pytest

from iaflow.config import parse_config
from iaflow.data import write_metrics_csv
from iaflow.errors import FormatError, TrainingError
from iaflow.experiments import conjugate_logp, evaluate_model, run_training
from iaflow.prng import Prng, streams
from iaflow.tensor import ParamStore, Tape
from iaflow.trainer import (
    CKPT_HEADER,
    AdamState,
    TrainSettings,
    adam_step,
    data_dependent_init,
    load_checkpoint,
    restore,
    save_checkpoint,
    train,
)
from iaflow.vae import VAE


def test_adam_first_step_is_lr_times_sign():
    store = ParamStore()
    store.add("theta", np.zeros(3))
    store.set_grad("theta", [0.1, -2.0, 1e-3])
    adam_step(AdamState(lr=1e-3), store)
    np.testing.assert_allclose(store["theta"], [-1e-3, 1e-3, -1e-3], rtol=1e-4)


def test_adam_zero_gradient_leaves_parameters():
    store = ParamStore()
    store.add("theta", np.array([1.0, -2.0]))
    state = AdamState()
    for _ in range(3):
        store.zero_grad()
        adam_step(state, store)
    assert store["theta"].tolist() == [1.0, -2.0]


def test_adam_is_deterministic():
    def run():
        store = ParamStore()
        store.add("w", np.ones(4))
        state = AdamState(lr=0.01)
        rng = Prng(3)
        for _ in range(50):
            store.set_grad("w", rng.normal(4) + store["w"])
            adam_step(state, store)
        return store["w"]

    assert run().tobytes() == run().tobytes()


def test_prng_streams():
    assert Prng(5).normal(8).tobytes() == Prng(5).normal(8).tobytes()
    assert Prng(5).normal(8).tobytes() != Prng(6).normal(8).tobytes()
    s = streams(0)
    assert sorted(s) == ["data", "eval", "init", "noise"]
    draws = [s[k].normal(4).tobytes() for k in s]
    assert len(set(draws)) == 4


def test_data_dependent_init_rejects_empty_batch():
    model = VAE(4, 2, Prng(0), hidden=[3], posterior="diagonal")
    with pytest.raises(ValueError):
        data_dependent_init(model, np.zeros((0, 4)), np.zeros((0, 2)))


def test_data_dependent_init_standardizes_encoder():
    x = Prng(1).uniform(0, 1, (64, 6))
    model = VAE(6, 2, Prng(0), hidden=[5], posterior="iaf", iaf_steps=1, made_hidden=[4], context_dim=2)
    data_dependent_init(model, x, Prng(2).normal((64, 2)))
    first = model.encoder[0]
    pre = first(Tape().constant(x)).value
    assert np.max(np.abs(pre.mean(axis=0))) < 1e-10
    np.testing.assert_allclose(pre.var(axis=0), 1.0, atol=1e-8)


def _tiny_run(seed=0, **overrides):
    values = {"experiment": "synth", "n_train": "64", "n_test": "16", "epochs": "2", "batch": "16", "seed": str(seed),
              "latent_dim": "2", "hidden": "8", "made_hidden": "4", "context_dim": "2", "iwae_samples": "4"}
    values.update(overrides)
    return run_training(parse_config(overrides=values))


def _csv(run, path):
    write_metrics_csv(path, run.result.metrics)
    return path.read_bytes()


def test_training_replay_is_identical(tmp_path):
    a, b = _tiny_run(), _tiny_run()
    assert _csv(a, tmp_path / "a.csv") == _csv(b, tmp_path / "b.csv")
    for name in a.model.store:
        assert a.model.store[name].tobytes() == b.model.store[name].tobytes()
    assert all(row["seconds"] == 0.0 for row in a.result.metrics)


def test_different_seeds_differ(tmp_path):
    assert _csv(_tiny_run(0), tmp_path / "a.csv") != _csv(_tiny_run(1), tmp_path / "b.csv")


def test_nan_parameter_aborts_with_name():
    model = VAE(3, 2, Prng(0), hidden=[4], posterior="diagonal", likelihood="gaussian")
    model.store["enc.mu.b"] = np.array([np.nan, 0.0])
    settings = TrainSettings(epochs=1, batch=4, data_init=False, iwae_samples=0)
    with pytest.raises(TrainingError, match="enc.mu.b"):
        train(model, Prng(1).normal((8, 3)), streams(0), settings)


def test_checkpoint_round_trip(tmp_path):
    run = _tiny_run()
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, run.model.store)
    lines = path.read_text().splitlines()
    assert lines[0] == CKPT_HEADER
    assert all(len(line.split("\t")) == 3 for line in lines[1:])
    values = load_checkpoint(path)
    fresh = _tiny_run(seed=9).model.store
    restore(fresh, values)
    for name in fresh:
        assert fresh[name].tobytes() == run.model.store[name].tobytes()


def test_checkpoint_scalar_and_hex_layout(tmp_path):
    store = ParamStore()
    store.add("a", np.array([1.0]))
    store.add("b", np.array([[0.5, -2.0]]))
    path = tmp_path / "c.txt"
    save_checkpoint(path, store)
    assert path.read_text() == (
        "iaflow-ckpt v1\n"
        "a\t1\t000000000000f03f\n"
        "b\t1,2\t000000000000e03f00000000000000c0\n"
    )


@pytest.mark.parametrize(
    "text",
    [
        "not-a-ckpt\n",
        "iaflow-ckpt v1\na\t1\n",
        "iaflow-ckpt v1\na\t1\tzz00000000000000\n",
        "iaflow-ckpt v1\na\t2\t000000000000f03f\n",
        "iaflow-ckpt v1\na\tx\t000000000000f03f\n",
    ],
)
def test_checkpoint_format_errors(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_restore_requires_every_parameter():
    store = ParamStore()
    store.add("a", np.zeros(2))
    with pytest.raises(FormatError):
        restore(store, {})


def test_conjugate_single_point_overfit_reaches_log_marginal():
    cfg = parse_config(overrides={"experiment": "conjugate1d", "seed": "0"})
    run = run_training(cfg)
    ev = evaluate_model(cfg, run.model, run.data, samples=20000)
    target = float(conjugate_logp(cfg, run.data.test.items)[0])
    assert abs(ev.vlb - target) < 1e-3 + 3 * ev.vlb_se
    assert run.result.metrics[19]["elbo"] > run.result.metrics[0]["elbo"]
