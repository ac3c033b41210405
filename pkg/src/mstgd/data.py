"""Synthetic stratified populations, MNIST IDX files and sampling primitives."""
from __future__ import annotations

import csv
import gzip
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import CategoryMoments

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DEC_INTERVALS = [(8, 12), (8, 10), (6, 9), (5, 8), (4, 7), (3, 6), (3, 5), (2, 4), (2, 3), (0, 3)]
INC_INTERVALS = DEC_INTERVALS[::-1]

NORMAL_KINDS = ("random", "meanD", "meanI", "varD", "varI")


# -- random streams ---------------------------------------------------------

def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed, *stream) -> np.random.Generator:
    """PCG64 generator for the named sub-stream ``stream`` of ``seed``.

    Streams are addressed by tuples such as ``("estimate", rep, category)``;
    strings are hashed with CRC-32 so the mapping is stable across runs.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return make_rng(rng_or_seed)


# -- stratified containers --------------------------------------------------

def _index_lists(labels, n_categories=None):
    labels = np.asarray(labels)
    n = int(labels.max()) + 1 if n_categories is None else n_categories
    lists = [np.flatnonzero(labels == j) for j in range(n)]
    if any(len(ix) == 0 for ix in lists):
        raise ValueError("every category must be nonempty")
    return lists


@dataclass(frozen=True)
class StratifiedPopulation:
    """``values[k, i]`` is observation ``i`` of round ``k``.

    Observations keep their category across rounds; weights are ``N_j / N``.
    """

    values: np.ndarray
    labels: np.ndarray
    category_indices: list = field(init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        labels = np.asarray(self.labels, dtype=int)
        if values.shape[1] != labels.shape[0]:
            raise ValueError("one label per observation required")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "category_indices", _index_lists(labels))

    @property
    def n_rounds(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.shape[1]

    @property
    def n_categories(self) -> int:
        return len(self.category_indices)

    @property
    def weights(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.category_indices], dtype=float) / self.size

    def round_mean(self, k):
        return self.values[k].mean(axis=0)

    def moments(self, k) -> list:
        """Population (ddof=0) mean and variance of every category in round ``k``."""
        out = []
        for ix in self.category_indices:
            block = self.values[k, ix]
            out.append(CategoryMoments(block.mean(axis=0), block.var(axis=0), len(ix)))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            dim = self.values.shape[2]
            cols = ["value"] if dim == 1 else [f"value_{i}" for i in range(dim)]
            writer.writerow(["round", "category", "index", *cols])
            for k in range(self.n_rounds):
                for i in range(self.size):
                    writer.writerow([k, int(self.labels[i]), i,
                                     *(format(v, ".17g") for v in self.values[k, i])])


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_categories: int = None
    category_indices: list = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on N")
        ix = _index_lists(labels, self.n_categories)
        object.__setattr__(self, "category_indices", ix)
        object.__setattr__(self, "n_categories", len(ix))

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.category_indices], dtype=float) / self.size

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_categories)


def contiguous_labels(n: int, n_categories: int) -> np.ndarray:
    if n % n_categories:
        raise ValueError("population size must be a multiple of the category count")
    return np.repeat(np.arange(n_categories), n // n_categories)


# -- synthetic populations --------------------------------------------------

def gen_uniform_population(intervals, rows=40, seed=0, n_categories=4) -> StratifiedPopulation:
    """One round per interval, ``rows`` uniform draws each, contiguous strata."""
    intervals = [(float(lo), float(hi)) for lo, hi in intervals]
    for lo, hi in intervals:
        if not lo <= hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
    rng = make_rng(seed, "uniform-population")
    values = np.empty((len(intervals), rows))
    for k, (lo, hi) in enumerate(intervals):
        values[k] = lo + (hi - lo) * rng.random(rows)
    return StratifiedPopulation(values, contiguous_labels(rows, n_categories))


def normal_schedule(kind, rounds=10, lo=1.0, hi=20.0, fixed=10.0, rng=None):
    """Per-round (mu, sigma) arrays for one of the five normal dataset kinds."""
    ramp = np.linspace(lo, hi, rounds)
    const = np.full(rounds, float(fixed))
    if kind == "random":
        if rng is None:
            raise ValueError("the random kind needs a generator")
        return rng.uniform(lo, hi, rounds), rng.uniform(lo, hi, rounds)
    if kind == "meanD":
        return ramp[::-1].copy(), const
    if kind == "meanI":
        return ramp, const
    if kind == "varD":
        return const, ramp[::-1].copy()
    if kind == "varI":
        return const, ramp
    raise ValueError(f"unknown normal dataset kind {kind!r}")


def gen_normal_population(kind, rows=40, rounds=10, seed=0, n_categories=4,
                          sigma=None) -> StratifiedPopulation:
    """Normal draws with the (mu, sigma) schedule of ``kind``.

    ``sigma`` overrides the standard-deviation schedule with a constant.
    """
    if kind not in NORMAL_KINDS:
        raise ValueError(f"unknown normal dataset kind {kind!r}")
    rng = make_rng(seed, "normal-population", kind)
    mu, sd = normal_schedule(kind, rounds, rng=rng)
    if sigma is not None:
        sd = np.full(rounds, float(sigma))
    values = mu[:, None] + sd[:, None] * rng.standard_normal((rounds, rows))
    return StratifiedPopulation(values, contiguous_labels(rows, n_categories))


# -- IDX files --------------------------------------------------------------

class IdxError(ValueError):
    """Malformed IDX input."""


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class IdxImageSet:
    images: np.ndarray  # (count, rows, cols) uint8
    labels: np.ndarray  # (count,) uint8

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def to_dataset(self, n_categories=10) -> LabeledDataset:
        flat = self.images.reshape(self.images.shape[0], -1).astype(float) / 255.0
        return LabeledDataset(flat, self.labels.astype(int), n_categories)


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{what} file shorter than its magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{what} file header truncated")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(
            f"{what} file holds {len(raw) - header} data bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> IdxImageSet:
    """Read an IDX image/label pair (optionally gzip-compressed)."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, "image")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, "label")
    return IdxImageSet(images.copy(), labels.copy())


def write_idx(images, labels, images_path, labels_path, compress=False):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        if compress:
            payload = gzip.compress(payload, mtime=0)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)


# -- sampling ---------------------------------------------------------------

def _categories(source):
    return getattr(source, "category_indices", source)


def draw_stratified(source, per_category_count, rng) -> list:
    """Uniform draw without replacement inside every category.

    ``source`` is anything with ``category_indices`` or a list of index arrays.
    Returns one index array per category.
    """
    rng = as_rng(rng)
    cats = _categories(source)
    if per_category_count > min(len(ix) for ix in cats):
        raise ValueError("per_category_count exceeds the smallest category")
    return [ix[rng.choice(len(ix), size=per_category_count, replace=False)] for ix in cats]


def draw_uniform(source, n, rng) -> np.ndarray:
    """Uniform draw of ``n`` indices without replacement from the whole population."""
    rng = as_rng(rng)
    total = source if isinstance(source, (int, np.integer)) else source.size
    if n > total:
        raise ValueError(f"cannot draw {n} from {total}")
    return rng.choice(total, size=n, replace=False)
