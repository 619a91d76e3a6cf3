"""Dataset ingestion: IDX (MNIST / FashionMNIST), CIFAR-10 binary batches, synthetic blobs."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073


class ParseError(ValueError):
    def __init__(self, msg: str, offset: int, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{msg} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes, expected_magic: int, path=None) -> np.ndarray:
    """Parse an unsigned-byte IDX payload into an array of its stated dims."""
    if len(buf) < 4:
        raise ParseError("truncated header", len(buf), path)
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise ParseError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0, path)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError("truncated dimension header", len(buf), path)
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header != size:
        raise ParseError(f"payload has {len(buf) - header} bytes, dims {dims} need {size}",
                         header + min(size, len(buf) - header), path)
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    imgs = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labs = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if imgs.shape[0] != labs.shape[0]:
        raise ParseError(f"{imgs.shape[0]} images but {labs.shape[0]} labels", 4, labels_path)
    images = (imgs.astype(np.float64) / 255.0).reshape(imgs.shape[0], 1, *imgs.shape[1:])
    return Dataset(images, labs.astype(np.int64), split)


def idx_bytes(array_u8: np.ndarray, magic: int) -> bytes:
    arr = np.asarray(array_u8, dtype=np.uint8)
    if (magic & 0xFF) != arr.ndim:
        raise ValueError(f"magic 0x{magic:08x} implies {magic & 0xFF} dims, array has {arr.ndim}")
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def dataset_to_idx(ds: Dataset) -> tuple[bytes, bytes]:
    """(images, labels) IDX bytes; single-channel datasets only."""
    if ds.images.ndim != 4 or ds.images.shape[1] != 1:
        raise ValueError("IDX export needs single-channel images")
    pixels = np.rint(ds.images[:, 0] * 255.0).astype(np.uint8)
    return idx_bytes(pixels, IDX_IMAGES_MAGIC), idx_bytes(ds.labels.astype(np.uint8), IDX_LABELS_MAGIC)


def parse_cifar10(buf: bytes, path=None) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) % CIFAR_RECORD:
        raise ParseError(f"size {len(buf)} is not a multiple of {CIFAR_RECORD}",
                         len(buf) - len(buf) % CIFAR_RECORD, path)
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise ParseError(f"label {labels[bad[0]]} out of range", int(bad[0]) * CIFAR_RECORD, path)
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(batch_paths, split: str = "train") -> Dataset:
    pixels, labels = [], []
    for p in batch_paths:
        x, y = parse_cifar10(_read_bytes(p), p)
        pixels.append(x)
        labels.append(y)
    if not pixels:
        return Dataset(np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=np.int64), split)
    return Dataset(np.concatenate(pixels).astype(np.float64) / 255.0, np.concatenate(labels), split)


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified sample of n items (largest-remainder allocation), shuffled."""
    if not 0 <= n <= len(ds):
        raise ValueError(f"cannot take {n} samples from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)
    quota = n * counts / len(ds) if len(ds) else counts.astype(float)
    take = np.floor(quota).astype(int)
    short = n - take.sum()
    order = sorted(range(len(classes)), key=lambda k: (-(quota[k] - take[k]), k))
    for k in order[:short]:
        take[k] += 1
    chosen = []
    for c, t in zip(classes, take):
        pool = np.nonzero(ds.labels == c)[0]
        chosen.append(rng.permutation(pool)[:t])
    idx = rng.permutation(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=int)
    return Dataset(ds.images[idx], ds.labels[idx], ds.split)


def synthetic(n: int, classes: int, seed: int, size: int = 8, noise: float = 0.05,
              split: str = "train") -> Dataset:
    """Gaussian blob per class at a class-specific angle around the image centre.

    Centres sit one per quadrant-ish sector so the class survives 2x2 pooling.
    """
    if classes < 2 or n < 0:
        raise ValueError("need n >= 0 and at least 2 classes")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    mid = (size - 1) / 2
    radius, sigma = 0.3 * size, size / 8
    ang = 2 * np.pi * np.arange(classes) / classes + np.pi / 4
    cy, cx = mid - radius * np.sin(ang), mid + radius * np.cos(ang)
    yy, xx = np.mgrid[0:size, 0:size]
    templates = np.exp(-((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)
                       / (2 * sigma ** 2))
    images = templates[labels] + noise * rng.standard_normal((n, size, size))
    return Dataset(np.clip(images, 0.0, 1.0)[:, None], labels, split)


# ---------------------------------------------------------------- named datasets

_IDX_DIRS = {"mnist": "mnist", "fashion_mnist": "fashion_mnist"}
DATASETS = ("mnist", "fashion_mnist", "cifar10", "synthetic")


def data_root() -> Path:
    return Path(os.environ.get("QT_DATA_DIR", "data"))


def _find(folder: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (folder / name).exists():
            return folder / name
    raise FileNotFoundError(f"{folder / stem} not found (set QT_DATA_DIR)")


def load_named(name: str, split: str, root=None) -> Dataset:
    """Load a dataset split from ``root`` (default: $QT_DATA_DIR)."""
    root = Path(root) if root is not None else data_root()
    if name in _IDX_DIRS:
        folder = root / _IDX_DIRS[name]
        prefix = "train" if split == "train" else "t10k"
        return load_idx(_find(folder, f"{prefix}-images-idx3-ubyte"),
                        _find(folder, f"{prefix}-labels-idx1-ubyte"), split)
    if name == "cifar10":
        folder = root / "cifar-10-batches-bin"
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        return load_cifar10([_find(folder, n) for n in names], split)
    raise ValueError(f"unknown dataset {name!r}; known: {DATASETS}")
