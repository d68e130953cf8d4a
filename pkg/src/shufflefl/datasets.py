"""Dataset containers, IDX I/O, synthetic generators and non-i.i.d. partitioning."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import DegenerateInputError, FormatError, InvariantError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DATA_DIR = Path(__file__).resolve().parents[2] / "data" / "mnist"


@dataclass
class Dataset:
    """Flat-feature samples in ``[0, 1]`` with integer labels."""

    X: np.ndarray
    y: np.ndarray
    class_count: int
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"X {self.X.shape} and y {self.y.shape} disagree")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ShapeError("label outside class range")
        if self.X.size and (self.X.min() < 0.0 or self.X.max() > 1.0):
            raise InvariantError("features must lie in [0, 1]")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != self.X.shape[1]:
            raise ShapeError(f"image shape {self.image_shape} does not cover {self.X.shape[1]} features")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.class_count, self.image_shape)

    def copy(self) -> "Dataset":
        return Dataset(self.X.copy(), self.y.copy(), self.class_count, self.image_shape)


@dataclass
class SeqDataset:
    """Sequences stored batch-major as an ``(n, T, d)`` array."""

    X: np.ndarray
    y: np.ndarray
    class_count: int

    image_shape = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 3 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError("sequence data must be (n, T, d) with one label per sequence")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def steps(self) -> List[np.ndarray]:
        """Per-step (n, d) matrices."""
        return [self.X[:, t] for t in range(self.X.shape[1])]

    def subset(self, idx) -> "SeqDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return SeqDataset(self.X[idx], self.y[idx], self.class_count)

    def copy(self) -> "SeqDataset":
        return SeqDataset(self.X.copy(), self.y.copy(), self.class_count)


# ---------------------------------------------------------------- IDX

def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (gzip-compressed or raw) into a uint8 array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    zero, dtype_code, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00" or dtype_code != 0x08:
        raise FormatError(f"{path}: bad magic {raw[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims)) if ndim else 0
    body = raw[header_len:]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def save_idx(path, array) -> None:
    """Write a uint8 array as IDX; a ``.gz`` suffix selects gzip compression."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError("IDX writer only supports unsigned bytes")
    payload = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes(order="C")
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    with _open(images_path) as fh:
        img_magic = struct.unpack(">I", fh.read(4))[0]
    with _open(labels_path) as fh:
        lbl_magic = struct.unpack(">I", fh.read(4))[0]
    if img_magic != IDX_IMAGES_MAGIC or images.ndim != 3:
        raise FormatError(f"{images_path}: not an IDX image file (magic {img_magic})")
    if lbl_magic != IDX_LABELS_MAGIC or labels.ndim != 1:
        raise FormatError(f"{labels_path}: not an IDX label file (magic {lbl_magic})")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    X = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), class_count, (rows, cols))


def load_mnist(split: str = "train", data_dir=None, limit: Optional[int] = None) -> Dataset:
    """Load the bundled MNIST subset (``train``: 4000 images, ``test``: 1000)."""
    data_dir = Path(data_dir) if data_dir is not None else DATA_DIR
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    prefix = {"train": "train", "test": "t10k"}[split]
    ds = load_idx(data_dir / f"{prefix}-images-idx3-ubyte.gz",
                  data_dir / f"{prefix}-labels-idx1-ubyte.gz")
    return ds.subset(np.arange(min(limit, len(ds)))) if limit else ds


# ---------------------------------------------------------------- synthetic data

def synth_blobs(classes: int, d: int, n: int, spread: float, seed: int,
                image_shape: Optional[Tuple[int, int]] = None,
                centers: Optional[np.ndarray] = None) -> Dataset:
    """Clipped Gaussian blobs around per-class centres in ``[0, 1]^d``.

    Labels cycle through the classes so every class is equally represented.
    Pass ``centers`` to draw a second sample (e.g. a test set) from the same
    class geometry.
    """
    if classes < 2:
        raise DegenerateInputError("need at least two classes")
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = rng.uniform(0.15, 0.85, size=(classes, d))
    y = np.arange(n) % classes
    rng.shuffle(y)
    X = np.clip(centers[y] + spread * rng.standard_normal((n, d)), 0.0, 1.0)
    return Dataset(X, y, classes, image_shape)


def blob_centers(classes: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.15, 0.85, size=(classes, d))


def synth_sequences(classes: int, T: int, d: int, n: int, seed: int,
                    noise: float = 0.1) -> SeqDataset:
    """Class-conditioned sinusoids: class ``c`` oscillates at ``c + 1`` cycles per sequence.

    Each feature channel carries the class frequency with its own random phase
    and amplitude; Gaussian noise is added and values are mapped into ``[0, 1]``.
    """
    if classes < 2:
        raise DegenerateInputError("need at least two classes")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    rng.shuffle(y)
    t = np.arange(T) / T
    freq = (y + 1.0)[:, None, None]
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, d))
    amp = rng.uniform(0.5, 1.0, size=(n, 1, d))
    wave = amp * np.sin(2 * np.pi * freq * t[None, :, None] + phase)
    X = np.clip(0.5 + 0.4 * wave + noise * rng.standard_normal((n, T, d)), 0.0, 1.0)
    return SeqDataset(X, y, classes)


# ---------------------------------------------------------------- partitioning

def dirichlet_partition(ds, n_clients: int, alpha: float, seed: int,
                        max_retries: int = 100) -> List[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet(alpha) shares.

    Returns one sorted index array per client. Shards are disjoint, cover every
    sample, and each holds at least one sample: a class draw is repeated while
    it would leave the running assignment with empty clients (bounded by
    ``max_retries``), after which empty clients are topped up round-robin from
    the largest shards.
    """
    n = len(ds)
    if n_clients < 1 or alpha <= 0:
        raise DegenerateInputError("need n_clients >= 1 and alpha > 0")
    if n < n_clients:
        raise DegenerateInputError(f"{n} samples cannot cover {n_clients} clients")
    if n_clients == 1:
        return [np.arange(n)]
    rng = np.random.default_rng(seed)
    buckets: List[List[int]] = [[] for _ in range(n_clients)]
    classes = np.unique(ds.y)
    for ci, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        last = ci == len(classes) - 1
        for _ in range(max_retries):
            props = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(props) * idx.size).astype(np.int64)[:-1]
            parts = np.split(idx, cuts)
            if not last or all(len(b) + len(p) > 0 for b, p in zip(buckets, parts)):
                break
        for b, p in zip(buckets, parts):
            b.extend(p.tolist())
    empty = [i for i, b in enumerate(buckets) if not b]
    for i in empty:
        donor = max(range(n_clients), key=lambda j: (len(buckets[j]), -j))
        buckets[i].append(buckets[donor].pop())
    return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
