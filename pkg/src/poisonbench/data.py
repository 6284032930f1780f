"""Datasets (MNIST IDX files, synthetic blobs) and heterogeneity partitioners."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, PoisonBenchError, Sample

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

DATA_DIR_ENV = "POISONBENCH_DATA_DIR"


class IdxFormatError(PoisonBenchError, ValueError):
    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class PartitionError(PoisonBenchError, RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer labels.

    ``features`` has shape ``(n, d)``; ``labels`` has shape ``(n,)``.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ConfigError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree", "dataset"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})", "dataset")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite entries", "dataset")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(f, int(b)) for f, b in zip(self.features, self.labels)]

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]))

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx].copy(), self.labels[idx].copy(), self.num_classes, name or self.name
        )


@dataclass(frozen=True, eq=False)
class Shard:
    owner: int
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


# ---------------------------------------------------------------------------
# IDX files

def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"truncated file ({len(raw)} bytes, header needs {header})", what)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"bad magic 0x{found:08X}, expected 0x{magic:08X}", what)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxFormatError(f"truncated file (expected {size} data bytes, got {len(raw) - header})", what)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10, name: str | None = None) -> Dataset:
    """Load an IDX image/label pair, scaling pixels to ``[0, 1]``.

    Either file may be gzip-compressed; this is detected from its first bytes.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels", "labels"
        )
    if labels.size and labels.max() >= num_classes:
        raise IdxFormatError(f"label {labels.max()} out of range for {num_classes} classes", "labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), num_classes, name or Path(images_path).name)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ConfigError(f"IDX images need a 3-d array, got shape {images.shape}", "images")
    payload = struct.pack(">IIII", IMAGES_MAGIC, *images.shape) + images.tobytes()
    _write(path, payload)


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    payload = struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    _write(path, payload)


def _write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # mtime=0 keeps the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def mnist_paths(data_dir=None) -> dict[str, Path]:
    """Locate the four MNIST files (plain or ``.gz``) under ``data_dir``.

    ``data_dir`` defaults to ``$POISONBENCH_DATA_DIR``.
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise ConfigError(f"no MNIST directory given and ${DATA_DIR_ENV} is unset", "dataset.data_dir")
    out = {}
    for key, stem in MNIST_FILES.items():
        for cand in (Path(data_dir) / stem, Path(data_dir) / f"{stem}.gz"):
            if cand.exists():
                out[key] = cand
                break
        else:
            raise ConfigError(f"missing {stem}[.gz] in {data_dir}", "dataset.data_dir")
    return out


def export_mnist_subset(out_dir, test_per_class: int = 100, seed: int = 0) -> dict[str, Path]:
    """Write the 5000-digit MNIST sample bundled with ``mlxtend`` as IDX files.

    The sample holds 500 digits per class. ``test_per_class`` of each class go
    to the t10k files and the rest to the train files, both in a seeded random
    order. Returns the paths keyed like :data:`MNIST_FILES`.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ConfigError("exporting the MNIST sample needs the optional 'mlxtend' package", "dataset") from exc

    X, y = mnist_data()
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(10):
        idx = rng.permutation(np.flatnonzero(y == k))
        test_idx.append(idx[:test_per_class])
        train_idx.append(idx[test_per_class:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    images = X.reshape(-1, 28, 28).astype(np.uint8)
    out_dir = Path(out_dir)
    paths = {k: out_dir / f"{v}.gz" for k, v in MNIST_FILES.items()}
    write_idx_images(paths["train_images"], images[train_idx])
    write_idx_labels(paths["train_labels"], y[train_idx])
    write_idx_images(paths["test_images"], images[test_idx])
    write_idx_labels(paths["test_labels"], y[test_idx])
    return paths


# ---------------------------------------------------------------------------
# synthetic data

def _blob_means(K: int, d: int, stream: np.random.Generator) -> np.ndarray:
    # Distinct directions in the positive orthant, since softmax regression has
    # no bias term and must separate classes through the origin.
    if K <= d:
        means = np.full((K, d), 0.1)
        means[np.arange(K), np.arange(K)] += 2.0
        return means
    for _ in range(10_000):
        dirs = np.abs(stream.standard_normal((K, d)))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cos = dirs @ dirs.T
        np.fill_diagonal(cos, 0.0)
        if cos.max() < 0.97:
            return 2.0 * dirs
    raise ConfigError(f"could not place {K} separated means in {d} dimensions", "dataset.synth")


def synth_blobs(K: int, d: int, per_class: int, spread: float, stream: np.random.Generator,
                name: str = "blobs") -> Dataset:
    """Gaussian blobs around ``K`` non-negative means, clamped to be entry-wise >= 0.

    Samples are ordered by class.
    """
    if K < 2 or d < 1 or per_class < 1 or spread < 0:
        raise ConfigError(f"bad blob parameters K={K} d={d} per_class={per_class} spread={spread}",
                          "dataset.synth")
    means = _blob_means(K, d, stream)
    labels = np.repeat(np.arange(K), per_class)
    noise = stream.standard_normal((K * per_class, d)) * spread
    feats = np.maximum(means[labels] + noise, 0.0)
    return Dataset(feats, labels.astype(np.int64), K, name)


def stratified_subset(dataset: Dataset, per_class: int, stream: np.random.Generator) -> Dataset:
    """Random subset with exactly ``per_class`` samples of each class (file order kept)."""
    picks = []
    for k in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) < per_class:
            raise ConfigError(f"class {k} has only {len(idx)} samples, need {per_class}", "dataset")
        picks.append(stream.choice(idx, size=per_class, replace=False))
    return dataset.subset(np.sort(np.concatenate(picks)))


# ---------------------------------------------------------------------------
# partitions

def partition_iid(n: int, W: int, stream: np.random.Generator) -> list[Shard]:
    """Random permutation cut into ``W`` shards of ``n // W`` (remainder dropped)."""
    if n < W:
        raise ConfigError(f"cannot split {n} samples over {W} workers", "partition")
    perm = stream.permutation(n)
    J = n // W
    return [Shard(w, np.sort(perm[w * J:(w + 1) * J])) for w in range(W)]


def _largest_remainder(q: np.ndarray, total: int) -> np.ndarray:
    raw = q * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(dataset: Dataset, W: int, beta: float, stream: np.random.Generator,
                        max_attempts: int = 100) -> list[Shard]:
    """Dirichlet label skew with equal shard sizes.

    Each worker draws class proportions ``q ~ Dir(beta * 1_K)`` and is filled
    with ``J = n // W`` samples in those proportions. When a class runs out,
    the proportions are renormalised over the classes that still have samples.
    Small ``beta`` gives each worker one dominant class; large ``beta``
    approaches the i.i.d. split.
    """
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}", "partition.beta")
    n, K = len(dataset), dataset.num_classes
    J = n // W
    if J == 0:
        raise PartitionError(f"degenerate partition: {n} samples for {W} workers")
    pools = [list(stream.permutation(np.flatnonzero(dataset.labels == k))) for k in range(K)]
    shards = []
    for w in range(W):
        for _ in range(max_attempts):
            q = stream.dirichlet(np.full(K, beta))
            if np.all(np.isfinite(q)):
                break
        else:
            raise PartitionError("degenerate partition: Dirichlet draws kept failing")
        taken: list[int] = []
        need = J
        while need > 0:
            avail = np.array([len(p) for p in pools])
            qa = np.where(avail > 0, q, 0.0)
            if qa.sum() <= 0:
                # all mass sits on exhausted classes; fall back to the largest pool
                qa = (avail == avail.max()).astype(np.float64)
            counts = np.minimum(_largest_remainder(qa / qa.sum(), need), avail)
            if counts.sum() == 0:
                counts[int(np.argmax(qa))] = 1
            for k in np.flatnonzero(counts):
                c = int(counts[k])
                taken.extend(pools[k][:c])
                del pools[k][:c]
            need = J - len(taken)
            q = qa
        shards.append(Shard(w, np.sort(np.asarray(taken, dtype=np.int64))))
    return shards


def partition_one_class(dataset: Dataset, W: int) -> list[Shard]:
    """Worker ``w`` receives only class ``w``; shards trimmed to the smallest class."""
    if W != dataset.num_classes:
        raise ConfigError(
            f"one_class partition needs W == K, got W={W}, K={dataset.num_classes}", "partition"
        )
    per_class = [np.flatnonzero(dataset.labels == k) for k in range(W)]
    J = min(len(p) for p in per_class)
    if J == 0:
        raise PartitionError("degenerate partition: some class has no samples")
    return [Shard(w, per_class[w][:J]) for w in range(W)]


def label_histogram(dataset: Dataset, shard: Shard) -> np.ndarray:
    return np.bincount(dataset.labels[shard.indices], minlength=dataset.num_classes)
