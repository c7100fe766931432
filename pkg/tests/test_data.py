from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iaflow.data import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    binarize_dynamic,
    digit_stencils,
    gen_synthetic_digits,
    gen_toy4,
    idx_bytes,
    idx_load,
    idx_load_labels,
    parse_idx,
    read_csv,
    write_metrics_csv,
    write_pgm,
    write_samples_csv,
)
from iaflow.errors import FormatError
from iaflow.prng import Prng

# -- IDX ---------------------------------------------------------------------------


def test_mnist_header_parses():
    header = bytes.fromhex("00000803") + (60000).to_bytes(4, "big") + (28).to_bytes(4, "big") * 2
    raw = header + bytes(60000 * 28 * 28)
    assert parse_idx(raw, IMAGES_MAGIC).shape == (60000, 28, 28)


def test_hand_built_file(tmp_path):
    path = tmp_path / "tiny-images"
    path.write_bytes(bytes([0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64]))
    ds = idx_load(path)
    np.testing.assert_array_equal(ds.items, [[0.0, 1.0, 128 / 255, 64 / 255]])
    assert ds.image_shape == (2, 2)


def test_labels_file(tmp_path):
    path = tmp_path / "labels"
    path.write_bytes(idx_bytes(np.array([3, 1, 4], dtype=np.uint8)))
    assert idx_load_labels(path).tolist() == [3, 1, 4]
    with pytest.raises(FormatError, match="00 00 08 01"):
        idx_load(path)


def test_wrong_magic_names_observed_bytes():
    raw = bytes([0, 0, 8, 1, 0, 0, 0, 1, 7])
    with pytest.raises(FormatError, match="00 00 08 01"):
        parse_idx(raw, IMAGES_MAGIC)
    assert parse_idx(raw, LABELS_MAGIC).tolist() == [7]


def test_truncated_payload_reports_lengths():
    raw = idx_bytes(np.zeros((2, 3, 3), dtype=np.uint8))[:-5]
    with pytest.raises(FormatError, match="expected 18 bytes, got 13"):
        parse_idx(raw, IMAGES_MAGIC)


def test_idx_round_trip():
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    assert np.array_equal(parse_idx(idx_bytes(arr), IMAGES_MAGIC), arr)


def test_idx_fuzz_never_crashes():
    valid = idx_bytes(np.arange(2 * 4 * 4, dtype=np.uint8).reshape(2, 4, 4))
    rnd = random.Random(1234)
    outcomes = {"ok": 0, "error": 0}
    for _ in range(2000):
        raw = bytearray(valid)
        kind = rnd.randrange(4)
        if kind == 0:
            raw[rnd.randrange(len(raw))] = rnd.randrange(256)
        elif kind == 1:
            del raw[rnd.randrange(len(raw)) :]
        elif kind == 2:
            raw += bytes(rnd.randrange(256) for _ in range(rnd.randrange(1, 9)))
        else:
            pos = rnd.randrange(16)
            raw[pos] = rnd.randrange(256)
        try:
            parse_idx(bytes(raw), IMAGES_MAGIC)
            outcomes["ok"] += 1
        except FormatError:
            outcomes["error"] += 1
    assert outcomes["error"] > 500 and outcomes["ok"] > 0


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_idx_random_bytes_structured_errors(raw):
    try:
        parse_idx(raw, IMAGES_MAGIC)
    except FormatError:
        pass


# -- binarization and generators -----------------------------------------------------


def test_binarize_degenerate_pixels():
    out = binarize_dynamic(np.array([[0.0, 1.0] * 50]), Prng(0))
    assert out[0, ::2].tolist() == [0.0] * 50
    assert out[0, 1::2].tolist() == [1.0] * 50


def test_binarize_half_mean():
    mean = binarize_dynamic(np.full((1, 100_000), 0.5), Prng(1)).mean()
    assert 0.495 <= mean <= 0.505


def test_binarize_deterministic_and_binary():
    x = Prng(2).uniform(0, 1, (10, 10))
    a, b = binarize_dynamic(x, Prng(3)), binarize_dynamic(x, Prng(3))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_synthetic_digits_identity_without_noise():
    ds = gen_synthetic_digits(10, seed=0, noise=0.0, shift=False)
    np.testing.assert_array_equal(ds.items.reshape(10, 8, 8), digit_stencils())
    assert ds.image_shape == (8, 8)


def test_stencils_are_distinct():
    flat = digit_stencils().reshape(10, -1)
    assert len({row.tobytes() for row in flat}) == 10


@pytest.mark.parametrize("seed", [0, 1, 17])
def test_synthetic_digits_range_and_determinism(seed):
    a = gen_synthetic_digits(200, seed)
    assert a.items.min() >= 0.0 and a.items.max() <= 1.0
    assert np.array_equal(a.items, gen_synthetic_digits(200, seed).items)
    assert not np.array_equal(a.items, gen_synthetic_digits(200, seed + 1).items)


def test_synthetic_digits_rejects_empty():
    with pytest.raises(ValueError):
        gen_synthetic_digits(0, 0)


def test_toy4_geometry():
    ds = gen_toy4()
    assert ds.items.shape == (4, 2)
    np.testing.assert_array_equal(ds.items.mean(axis=0), [0.0, 0.0])
    sides = [np.linalg.norm(ds.items[i] - ds.items[(i + 1) % 4]) for i in range(4)]
    assert sides == [4.0] * 4
    assert np.linalg.norm(ds.items, axis=1).tolist() == [2 * math.sqrt(2)] * 4


# -- CSV and PGM -------------------------------------------------------------------


def test_metrics_header_only(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [])
    assert path.read_bytes() == b"epoch,step,elbo,recon,kl,free_bits_obj,logp_iwae,seconds\n"


def test_metrics_golden(tmp_path):
    rows = [
        dict(epoch=1, step=63, elbo=-45.123456789012, recon=-40.0, kl=5.1234567891, free_bits_obj=-45.5, logp_iwae=float("nan"), seconds=0.0),
        dict(epoch=2, step=126, elbo=-1.0 / 3.0, recon=-2e-10, kl=123456789012.0, free_bits_obj=0.1, logp_iwae=-30.25, seconds=1.5),
    ]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert path.read_text() == (
        "epoch,step,elbo,recon,kl,free_bits_obj,logp_iwae,seconds\n"
        "1,63,-45.1234568,-40,5.12345679,-45.5,nan,0\n"
        "2,126,-0.333333333,-2e-10,1.23456789e+11,0.1,-30.25,1.5\n"
    )


def test_samples_golden(tmp_path):
    path = tmp_path / "s.csv"
    write_samples_csv(path, np.array([[[0.5, -1.25]], [[1e-3, 2.0 / 3.0]]]))
    assert path.read_text() == "datapoint,sample_idx,z1,z2\n0,0,0.5,-1.25\n1,0,0.001,0.666666667\n"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_samples_round_trip(tmp_path_factory, seed):
    samples = Prng(seed).normal((3, 4, 2)) * 10.0 ** Prng(seed + 1).integers(-5, 6, (3, 4, 2))
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    write_samples_csv(path, samples)
    header, table = read_csv(path)
    assert header == ["datapoint", "sample_idx", "z1", "z2"]
    np.testing.assert_allclose(table[:, 2:].reshape(3, 4, 2), samples, rtol=5e-9, atol=0)
    assert table[:, 0].tolist() == [0] * 4 + [1] * 4 + [2] * 4


def test_write_error_names_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_metrics_csv(tmp_path / "missing" / "m.csv", [])


def test_pgm_layout(tmp_path):
    path = tmp_path / "g.pgm"
    write_pgm(path, np.ones((2, 2, 2)), cols=2)
    lines = path.read_text().splitlines()
    assert lines[:3] == ["P2", "7 4", "255"]
    assert lines[4] == "0 255 255 0 255 255 0"
