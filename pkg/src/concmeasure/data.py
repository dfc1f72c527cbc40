"""Datasets, loaders for the common binary image formats, and synthetic generators.

A :class:`Dataset` is an immutable ``(m, n)`` float64 array plus a source tag.
The empirical measure of a dataset assigns mass ``1/m`` to every row.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import FormatError, ParameterError, ParseError

PathLike = Union[str, Path]

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
_IDX_UBYTE = 0x08


def ceil_count(fraction: float, m: int) -> int:
    """Smallest integer count ``c`` with ``c/m >= fraction``.

    ``fraction * m`` is rounded to 9 decimals first so that e.g. ``0.07 * 100``
    (``7.000000000000001`` in binary) yields 7 rather than 8.
    """
    return int(math.ceil(round(fraction * m, 9)))


def floor_count(fraction: float, m: int) -> int:
    return int(math.floor(round(fraction * m, 9)))


def derive_seed(seed: int, key) -> int:
    """Independent 63-bit sub-seed of ``seed`` for an integer or string key."""
    if isinstance(key, str):
        key = zlib.crc32(key.encode())
    word = np.random.SeedSequence([seed, key]).generate_state(1, dtype=np.uint64)[0]
    return int(word >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class Dataset:
    """``m`` points in R^n with the counting measure."""

    points: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ParameterError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ParameterError(f"dataset needs m >= 1 and n >= 1, got shape {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.m

    def subset(self, indices, source_tag: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.points[idx], self.source_tag if source_tag is None else source_tag)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", self.m, self.n))
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        return h.hexdigest()

    def measure(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self)


Predicate = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Counting measure ``mu_S(A) = |S ∩ A| / |S|``."""

    dataset: Dataset

    def count(self, predicate: Predicate) -> int:
        if callable(predicate):
            mask = np.asarray(predicate(self.dataset.points), dtype=bool)
        else:
            mask = np.asarray(predicate, dtype=bool)
        if mask.shape != (self.dataset.m,):
            raise ParameterError(
                f"predicate must give one truth value per point, got shape {mask.shape}"
            )
        return int(np.count_nonzero(mask))

    def __call__(self, predicate: Predicate) -> float:
        return self.count(predicate) / self.dataset.m


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``floor(m * f)`` points form the train part."""
    m = dataset.m
    n_train = floor_count(spec.train_fraction, m)
    if n_train < 1 or n_train >= m:
        raise ParameterError(
            f"split of m={m} at fraction {spec.train_fraction} leaves an empty part"
        )
    perm = np.random.default_rng(spec.seed).permutation(m)
    tag = dataset.source_tag
    return (
        dataset.subset(perm[:n_train], f"{tag}[train]"),
        dataset.subset(perm[n_train:], f"{tag}[test]"),
    )


# --------------------------------------------------------------------------- loaders


def _read_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path: PathLike) -> Dataset:
    """Read an unsigned-byte IDX file (MNIST layout); pixels are scaled to [0, 1].

    The leading dimension is the sample count; the remaining dimensions are
    flattened into the point dimension. Gzipped files are accepted.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError("truncated IDX header", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic: first two bytes must be zero", offset=0)
    if raw[2] != _IDX_UBYTE:
        raise FormatError(f"unsupported IDX type code 0x{raw[2]:02x}, expected 0x08", offset=2)
    ndim = raw[3]
    if ndim < 1:
        raise FormatError("IDX file declares zero dimensions", offset=3)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError("truncated IDX dimension table", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    m = dims[0]
    n = math.prod(dims[1:])
    expected = header_end + m * n
    if len(raw) < expected:
        raise FormatError(
            f"truncated IDX payload: expected {m * n} data bytes, found {len(raw) - header_end}",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise FormatError("trailing bytes after IDX payload", offset=expected)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=m * n, offset=header_end)
    return Dataset(pixels.reshape(m, n).astype(np.float64) / 255.0, f"idx:{Path(path).name}")


def load_cifar_binary(paths: Sequence[PathLike]) -> Dataset:
    """Read CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).

    Labels are dropped.
    """
    if not paths:
        raise FormatError("no input")
    blocks = []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(
                f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD}",
                offset=len(raw) - len(raw) % CIFAR_RECORD,
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        blocks.append(records[:, 1:])
    pixels = np.concatenate(blocks, axis=0)
    names = ",".join(Path(p).name for p in paths)
    return Dataset(pixels.astype(np.float64) / 255.0, f"cifar:{names}")


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: PathLike) -> Dataset:
    """Read a comma-separated numeric table, one point per row.

    A first row containing any non-numeric cell is treated as a header.
    Values are used as-is.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not all(_is_number(c) for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"expected {width} cells, found {len(row)}", row=lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", row=lineno) from None
    if not rows:
        raise ParseError("no data rows")
    return Dataset(np.array(rows, dtype=np.float64), f"csv:{Path(path).name}")


def write_csv(dataset: Dataset, path: PathLike) -> None:
    # repr() is the shortest exact round-trip form of a double
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in dataset.points:
            writer.writerow([repr(float(v)) for v in row])


def load_any(path: PathLike, fmt: str = "auto") -> Dataset:
    path = Path(path)
    if fmt == "auto":
        name = path.name.lower()
        if name.endswith(".csv"):
            fmt = "csv"
        elif name.endswith(".bin"):
            fmt = "cifar"
        else:
            fmt = "idx"
    if fmt == "csv":
        return load_csv(path)
    if fmt == "cifar":
        return load_cifar_binary([path])
    if fmt == "idx":
        return load_idx(path)
    raise ParameterError(f"unknown data format {fmt!r}")


# --------------------------------------------------------------------------- generators


def gen_uniform_cube(n: int, m: int, seed: int) -> Dataset:
    if n < 1 or m < 1:
        raise ParameterError("need n >= 1 and m >= 1")
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((m, n)), f"uniform(n={n},m={m},seed={seed})")


def gen_gaussian(n: int, m: int, sigma: float, seed: int) -> Dataset:
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    if n < 1 or m < 1:
        raise ParameterError("need n >= 1 and m >= 1")
    rng = np.random.default_rng(seed)
    return Dataset(sigma * rng.standard_normal((m, n)), f"gaussian(n={n},m={m},sigma={sigma},seed={seed})")


def gen_mixture(centers, weights, sigma: float, m: int, seed: int) -> Dataset:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    if m < 1:
        raise ParameterError("need m >= 1")
    if weights.shape != (centers.shape[0],) or np.any(weights < 0):
        raise ParameterError("need one non-negative weight per center")
    if not math.isclose(weights.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ParameterError(f"weights must sum to 1, got {weights.sum()}")
    rng = np.random.default_rng(seed)
    comp = rng.choice(centers.shape[0], size=m, p=weights / weights.sum())
    noise = rng.standard_normal((m, centers.shape[1]))
    return Dataset(centers[comp] + sigma * noise, f"mixture(k={len(centers)},m={m},seed={seed})")
