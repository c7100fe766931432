"""Datasets: IDX parsing, dynamic binarization, synthetic digits, the four-point toy set, CSV/PGM writers."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .prng import Prng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

METRICS_HEADER = "epoch,step,elbo,recon,kl,free_bits_obj,logp_iwae,seconds"


@dataclass(frozen=True)
class Dataset:
    """Rows of observations.

    ``grid`` is ``"1/256"`` for quantized intensities in [0, 1], ``"binary"``
    for {0, 1} data and ``"continuous"`` for unconstrained real values (the
    toy set); only the first two are restricted to [0, 1].
    """

    items: np.ndarray
    name: str
    grid: str = "1/256"
    image_shape: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def dim(self) -> int:
        return self.items.shape[1]


# -- IDX ---------------------------------------------------------------------------


def parse_idx(raw: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into an array of its declared shape."""
    if len(raw) < 4:
        raise FormatError(f"IDX: file too short for a magic number ({len(raw)} bytes)")
    magic = raw[:4]
    if magic[0] != 0 or magic[1] != 0 or magic[2] != 0x08:
        raise FormatError(f"IDX: bad magic bytes {magic.hex(' ')}; expected 00 00 08 <ndim>")
    value = int.from_bytes(magic, "big")
    if expected_magic is not None and value != expected_magic:
        raise FormatError(f"IDX: bad magic bytes {magic.hex(' ')}; expected {expected_magic:08x}")
    ndim = magic[3]
    if ndim == 0:
        raise FormatError("IDX: zero dimensions declared")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"IDX: truncated header: expected {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = math.prod(dims)
    actual = len(raw) - header
    if actual != expected:
        raise FormatError(f"IDX: payload length mismatch: expected {expected} bytes, got {actual}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def idx_load(path, name: str | None = None) -> Dataset:
    """Load an IDX image file (magic 0x00000803) as rows scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    arr = parse_idx(raw, IMAGES_MAGIC)
    items = arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(items, name or Path(path).name, "1/256", tuple(arr.shape[1:]))


def idx_load_labels(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes(), LABELS_MAGIC).copy()


def idx_bytes(array: np.ndarray) -> bytes:
    """Serialize an unsigned-byte array in IDX format."""
    array = np.asarray(array, dtype=np.uint8)
    head = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + array.tobytes()


# -- binarization and generators -----------------------------------------------------


def binarize_dynamic(data, prng: Prng) -> np.ndarray:
    """Fresh Bernoulli(pixel) draw for every pixel."""
    x = data.items if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    return (prng.uniform(0.0, 1.0, x.shape) < x).astype(np.float64)


_STENCILS = [
    """
    ..####..
    .#....#.
    .#...##.
    .#..#.#.
    .#.#..#.
    .##...#.
    .#....#.
    ..####..
    """,
    """
    ...##...
    ..###...
    .#.##...
    ...##...
    ...##...
    ...##...
    ...##...
    .######.
    """,
    """
    ..####..
    .#....#.
    ......#.
    .....#..
    ....#...
    ...#....
    ..#.....
    .######.
    """,
    """
    ..####..
    .#....#.
    ......#.
    ...###..
    ......#.
    ......#.
    .#....#.
    ..####..
    """,
    """
    ....##..
    ...#.#..
    ..#..#..
    .#...#..
    .######.
    .....#..
    .....#..
    .....#..
    """,
    """
    .######.
    .#......
    .#......
    .#####..
    ......#.
    ......#.
    .#....#.
    ..####..
    """,
    """
    ...###..
    ..#.....
    .#......
    .#####..
    .#....#.
    .#....#.
    .#....#.
    ..####..
    """,
    """
    .######.
    ......#.
    .....#..
    ....#...
    ...#....
    ...#....
    ...#....
    ...#....
    """,
    """
    ..####..
    .#....#.
    .#....#.
    ..####..
    .#....#.
    .#....#.
    .#....#.
    ..####..
    """,
    """
    ..####..
    .#....#.
    .#....#.
    .#....#.
    ..#####.
    ......#.
    .....#..
    ..###...
    """,
]


def digit_stencils() -> np.ndarray:
    """The ten 8x8 digit templates, shape (10, 8, 8), values in {0, 1}."""
    out = np.zeros((10, 8, 8))
    for k, art in enumerate(_STENCILS):
        rows = [r.strip() for r in art.strip().splitlines()]
        out[k] = [[1.0 if c == "#" else 0.0 for c in r] for r in rows]
    return out


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    src = img[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
    out[max(0, dy) : max(0, dy) + src.shape[0], max(0, dx) : max(0, dx) + src.shape[1]] = src
    return out


def gen_synthetic_digits(n: int, seed: int, noise: float = 0.1, shift: bool = True) -> Dataset:
    """``n`` noisy 8x8 digits; item i uses stencil ``i % 10``.

    Each image is translated by up to one pixel per axis, perturbed with
    Gaussian noise of standard deviation ``noise`` and clipped to [0, 1].
    """
    if n < 1:
        raise ValueError(f"gen_synthetic_digits: n must be >= 1, got {n}")
    rng = Prng(seed)
    stencils = digit_stencils()
    items = np.empty((n, 64))
    for i in range(n):
        img = stencils[i % 10]
        if shift:
            dy, dx = rng.integers(-1, 2, 2)
            img = _shift(img, int(dy), int(dx))
        if noise > 0:
            img = np.clip(img + noise * rng.normal(img.shape), 0.0, 1.0)
        items[i] = img.ravel()
    return Dataset(items, f"synthetic-digits-{seed}", "1/256", (8, 8))


def gen_toy4() -> Dataset:
    """Four 2-D points on the corners of a square centred at the origin."""
    items = np.array([[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]])
    return Dataset(items, "toy4", "continuous")


# -- writers -----------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".9g")


def write_metrics_csv(path, rows) -> None:
    fields = METRICS_HEADER.split(",")
    lines = [METRICS_HEADER]
    for row in rows:
        values = [row[f] for f in fields] if isinstance(row, dict) else list(row)
        lines.append(",".join(_fmt(v) for v in values))
    _write(path, "\n".join(lines) + "\n")


def write_samples_csv(path, samples) -> None:
    """Rows ``(datapoint, sample_idx, z1, ..., zD)``; ``samples`` is (points, S, D)."""
    samples = np.asarray(samples, dtype=np.float64)
    dim = samples.shape[2]
    lines = [",".join(["datapoint", "sample_idx"] + [f"z{i + 1}" for i in range(dim)])]
    for p in range(samples.shape[0]):
        for s in range(samples.shape[1]):
            lines.append(",".join([str(p), str(s)] + [_fmt(v) for v in samples[p, s]]))
    _write(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().strip("\n").split("\n")
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    return header, np.array(rows).reshape(len(rows), len(header))


def write_pgm(path, images: np.ndarray, cols: int = 8) -> None:
    """Tile (N, h, w) images in [0, 1] into one plain (P2) PGM grid."""
    images = np.clip(np.asarray(images, dtype=np.float64), 0.0, 1.0)
    n, h, w = images.shape
    rows = math.ceil(n / cols)
    grid = np.zeros((rows * (h + 1) + 1, cols * (w + 1) + 1))
    for k in range(n):
        r, c = divmod(k, cols)
        grid[1 + r * (h + 1) : 1 + r * (h + 1) + h, 1 + c * (w + 1) : 1 + c * (w + 1) + w] = images[k]
    pix = np.rint(grid * 255).astype(int)
    lines = ["P2", f"{pix.shape[1]} {pix.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pix]
    _write(path, "\n".join(lines) + "\n")


def _write(path, text: str) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
