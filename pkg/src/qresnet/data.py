"""Datasets, the IDX image format and amplitude encoding.

Pixels are kept raw in [0, 1]; zero-padding to ``2**n_data`` and L2
normalization happen only at encoding time, so attacks can act on pixels.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .statekernel import StateVector

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (n, features), float in [0, 1]
    labels: np.ndarray  # (n,), int class indices
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        y = np.asarray(self.labels).astype(np.int64)
        if x.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{x.shape[0]} samples but {y.shape} labels")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.samples.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx, note: str = "") -> "Dataset":
        idx = np.asarray(idx)
        prov = f"{self.provenance}; {note}" if note else self.provenance
        return Dataset(self.samples[idx], self.labels[idx], prov)


@dataclass(frozen=True)
class PreprocessSpec:
    pad_to: int = 1024
    normalization: str = "l2"

    def __post_init__(self):
        if self.pad_to < 1 or self.pad_to & (self.pad_to - 1):
            raise ValueError(f"pad_to must be a power of two, got {self.pad_to}")
        if self.normalization != "l2":
            raise ValueError("only L2 normalization is supported")

    @property
    def n_qubits(self) -> int:
        return self.pad_to.bit_length() - 1


def _read_idx(path, magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    found, = struct.unpack(">i", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: magic {found}, expected {magic}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise IdxFormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write unsigned bytes in IDX layout; 1-D arrays become label files."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("IDX writer expects uint8 data")
    magic = LABEL_MAGIC if a.ndim == 1 else IMAGE_MAGIC
    header = struct.pack(">i", magic) + struct.pack(f">{a.ndim}i", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair; pixels are divided by 255."""
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(x, labels.astype(np.int64), f"idx:{Path(images_path).name}")


def filter_classes(
    dataset: Dataset,
    classes: Sequence[int],
    subsample: Optional[int] = None,
    seed: int = 0,
) -> Dataset:
    """Keep ``classes`` and relabel them 0..k-1 in list order.

    ``subsample`` draws a class-balanced subset (sizes differ by at most one).
    """
    classes = [int(c) for c in classes]
    keep = np.isin(dataset.labels, classes)
    if not keep.any():
        raise ValueError(f"no samples with classes {classes}")
    remap = {c: i for i, c in enumerate(classes)}
    idx = np.flatnonzero(keep)
    labels = np.array([remap[c] for c in dataset.labels[idx]], dtype=np.int64)
    x = dataset.samples[idx]
    if subsample is not None:
        rng = np.random.default_rng(seed)
        k = len(classes)
        picked = []
        for i in range(k):
            want = subsample // k + (1 if i < subsample % k else 0)
            pool = np.flatnonzero(labels == i)
            if want > pool.size:
                raise ValueError(f"class {classes[i]} has {pool.size} samples, {want} requested")
            picked.append(rng.choice(pool, size=want, replace=False))
        sel = np.sort(np.concatenate(picked))
        x, labels = x[sel], labels[sel]
    note = f"classes={classes}" + (f" subsample={subsample} seed={seed}" if subsample is not None else "")
    prov = f"{dataset.provenance}; {note}" if dataset.provenance else note
    return Dataset(x, labels, prov)


def train_test_split_balanced(dataset: Dataset, n_train: int, n_test: int, seed: int = 0):
    """Disjoint class-balanced train/test subsets."""
    both = filter_classes(dataset, range(dataset.n_classes), n_train + n_test, seed)
    rng = np.random.default_rng(seed + 1)
    train_idx, test_idx = [], []
    k = both.n_classes
    for c in range(k):
        pool = rng.permutation(np.flatnonzero(both.labels == c))
        n_tr = n_train // k + (1 if c < n_train % k else 0)
        train_idx.append(pool[:n_tr])
        test_idx.append(pool[n_tr:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return both.subset(tr, "train"), both.subset(te, "test")


def amplitude_encode(x, spec: PreprocessSpec) -> StateVector:
    return StateVector(encode_batch(np.asarray(x, dtype=float)[None], spec)[0], spec.n_qubits)


def encode_batch(x: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Zero-pad rows to ``spec.pad_to`` and L2-normalize; returns real amplitudes."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] > spec.pad_to:
        raise ValueError(f"{x.shape[1]} features do not fit in {spec.pad_to} amplitudes")
    out = np.zeros((x.shape[0], spec.pad_to))
    out[:, : x.shape[1]] = x
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot encode an all-zero feature vector")
    return out / norms[:, None]


def synthetic_two_gaussians(
    n_features: int, n_samples: int, separation: float, seed: int = 0, sigma: float = 0.05
) -> Dataset:
    """Two isotropic clusters in [0, 1]^n, centres ``separation * sigma`` apart.

    Clusters sit symmetrically around 0.5 along a random unit direction.
    """
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    labels = np.arange(n_samples) % 2
    offset = (labels[:, None] - 0.5) * separation * sigma * direction[None, :]
    x = 0.5 + offset + sigma * rng.normal(size=(n_samples, n_features))
    return Dataset(np.clip(x, 0.0, 1.0), labels, f"two-gaussians sep={separation} seed={seed}")


def write_dataset_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(dataset.n_features)])
        for y, row in zip(dataset.labels, dataset.samples):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def export_bundled_mnist(out_dir, n_train_per_class: int = 350, seed: int = 0) -> dict:
    """Write the 5000-image MNIST excerpt shipped with mlxtend as IDX files.

    Each digit contributes ``n_train_per_class`` images to the train pair and
    the rest (500 per digit in total) to the test pair.
    """
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    x = x.astype(np.uint8)
    y = y.astype(np.uint8)
    rng = np.random.default_rng(seed)
    tr, te = [], []
    for c in range(10):
        pool = rng.permutation(np.flatnonzero(y == c))
        tr.append(pool[:n_train_per_class])
        te.append(pool[n_train_per_class:])
    tr = np.sort(np.concatenate(tr))
    te = np.sort(np.concatenate(te))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    write_idx(paths["train_images"], x[tr].reshape(-1, 28, 28))
    write_idx(paths["train_labels"], y[tr])
    write_idx(paths["test_images"], x[te].reshape(-1, 28, 28))
    write_idx(paths["test_labels"], y[te])
    return {k: str(v) for k, v in paths.items()}
