"""Dataset loading for the two image formats we train on.

Both loaders return images already normalized to roughly unit scale,
as float arrays in NCHW layout, with int64 labels. Raw files are
validated before any pixel is touched: a wrong magic number is a
FormatError (you handed us the wrong kind of file), a short read is a
DataError (the right kind of file, but damaged).

Writers for both formats live here too. They exist for building
fixture data and small stand-in corpora; round-tripping through them
is also how the loader tests work.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .precision import default_dtype

# Normalization constants. Channel statistics of the respective
# training sets, in [0, 1] pixel scale.
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

# IDX magic numbers: two zero bytes, a dtype byte (0x08 = uint8), then
# the number of dimensions.
_IDX_MAGIC_IMAGES = 0x00000803
_IDX_MAGIC_LABELS = 0x00000801

_CIFAR_RECORD = 1 + 3 * 32 * 32
_CIFAR_CLASSES = 10


@dataclass
class Dataset:
    """A split ready for training: normalized images plus labels."""

    name: str
    images: np.ndarray  # (N, C, H, W) float
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise FormatError(f"images must be NCHW, got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise FormatError(
                f"{self.images.shape[0]} images but {self.labels.shape} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _open_maybe_gz(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _find(dir_path: Path, stem: str) -> Path:
    """Locate an IDX file, accepting a .gz sibling transparently."""
    for candidate in (dir_path / stem, dir_path / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(
        f"missing {stem} (or {stem}.gz) in {dir_path}. "
        f"Download the dataset there, or generate a stand-in with "
        f"scripts/make_stand_in_data.py."
    )


def read_idx(path: Path) -> np.ndarray:
    """Read one IDX file into a uint8 array of its recorded shape."""
    with _open_maybe_gz(path) as f:
        header = f.read(4)
        if len(header) < 4:
            raise DataError(f"{path}: truncated before magic number")
        (magic,) = struct.unpack(">I", header)
        if magic == _IDX_MAGIC_IMAGES:
            ndim = 3
        elif magic == _IDX_MAGIC_LABELS:
            ndim = 1
        else:
            raise FormatError(
                f"{path}: magic 0x{magic:08x} is not an IDX image or label file"
            )
        dims_raw = f.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise DataError(f"{path}: truncated inside the dimension header")
        dims = struct.unpack(f">{ndim}I", dims_raw)
        count = int(np.prod(dims))
        payload = f.read(count)
        if len(payload) < count:
            raise DataError(
                f"{path}: expected {count} payload bytes, got {len(payload)}"
            )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx_images(path: Path, images: np.ndarray) -> None:
    """Write (N, H, W) uint8 images as an IDX3 file (gzipped if *.gz)."""
    if images.ndim != 3 or images.dtype != np.uint8:
        raise FormatError(f"need (N, H, W) uint8, got {images.shape} {images.dtype}")
    with (gzip.open if path.suffix == ".gz" else open)(path, "wb") as f:
        f.write(struct.pack(">IIII", _IDX_MAGIC_IMAGES, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    if labels.ndim != 1:
        raise FormatError(f"need (N,) labels, got {labels.shape}")
    with (gzip.open if path.suffix == ".gz" else open)(path, "wb") as f:
        f.write(struct.pack(">II", _IDX_MAGIC_LABELS, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def load_mnist(dir_path: str | Path) -> tuple[Dataset, Dataset]:
    """Load the four-IDX-file layout: train/t10k images and labels."""
    dir_path = Path(dir_path)
    splits = []
    for split, stem in (("train", "train"), ("test", "t10k")):
        images = read_idx(_find(dir_path, f"{stem}-images-idx3-ubyte"))
        labels = read_idx(_find(dir_path, f"{stem}-labels-idx1-ubyte"))
        if images.shape[0] != labels.shape[0]:
            raise DataError(
                f"{split}: {images.shape[0]} images vs {labels.shape[0]} labels"
            )
        x = images.astype(default_dtype())[:, None] / 255.0
        x = (x - MNIST_MEAN) / MNIST_STD
        splits.append(Dataset(split, x, labels.astype(np.int64), num_classes=10))
    return splits[0], splits[1]


def _read_cifar_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
        raise DataError(
            f"{path}: {raw.size} bytes is not a whole number of "
            f"{_CIFAR_RECORD}-byte records"
        )
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0]
    if labels.max(initial=0) >= _CIFAR_CLASSES:
        raise FormatError(
            f"{path}: label {labels.max()} out of range, not a 10-class batch"
        )
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def write_cifar_batch(path: Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write (N, 3, 32, 32) uint8 images in the binary batch layout."""
    if images.ndim != 4 or images.shape[1:] != (3, 32, 32) or images.dtype != np.uint8:
        raise FormatError(f"need (N, 3, 32, 32) uint8, got {images.shape}")
    records = np.empty((images.shape[0], _CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(images.shape[0], -1)
    path.write_bytes(records.tobytes())


def load_cifar(dir_path: str | Path) -> tuple[Dataset, Dataset]:
    """Load the binary-batch layout: data_batch_*.bin plus test_batch.bin."""
    dir_path = Path(dir_path)
    train_files = sorted(dir_path.glob("data_batch_*.bin"))
    test_file = dir_path / "test_batch.bin"
    if not train_files or not test_file.exists():
        raise DataError(
            f"missing CIFAR batches in {dir_path}: expected data_batch_1.bin.. "
            f"and test_batch.bin. Download the binary version there, or "
            f"generate a stand-in with scripts/make_stand_in_data.py."
        )
    mean = np.array(CIFAR10_MEAN, dtype=default_dtype()).reshape(1, 3, 1, 1)
    std = np.array(CIFAR10_STD, dtype=default_dtype()).reshape(1, 3, 1, 1)

    def normalize(parts: list[tuple[np.ndarray, np.ndarray]], name: str) -> Dataset:
        images = np.concatenate([p[0] for p in parts])
        labels = np.concatenate([p[1] for p in parts])
        x = images.astype(default_dtype()) / 255.0
        x = (x - mean) / std
        return Dataset(name, x, labels.astype(np.int64), num_classes=10)

    train = normalize([_read_cifar_batch(p) for p in train_files], "train")
    test = normalize([_read_cifar_batch(test_file)], "test")
    return train, test
