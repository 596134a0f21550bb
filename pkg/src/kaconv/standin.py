"""Offline stand-in corpora, shaped exactly like the real datasets.

Training contracts in this repo are exercised against whatever lives in
the data directory. When the real corpora are present they are used
as-is; when they are not (no network access, fresh checkout), these
generators write small substitutes in the same on-disk formats, so
every loader code path still runs for real.

The digit stand-in upsamples scikit-learn's 8x8 handwritten digits to
28x28 and writes the standard four-file IDX layout. It is real
handwriting, just lower resolution, which keeps "a small convnet
learns it quickly" true. The 32x32 color stand-in is synthetic: each
class gets a fixed palette color plus an oriented sinusoidal texture,
separable but not trivially so under noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import (
    write_cifar_batch,
    write_idx_images,
    write_idx_labels,
)

_MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
_CIFAR_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6)) + ("test_batch.bin",)


def _have_all(dir_path: Path, names) -> bool:
    return all(
        (dir_path / n).exists() or (dir_path / f"{n}.gz").exists() for n in names
    )


def make_digits_idx(dir_path: str | Path, seed: int = 0, expand: int = 5) -> None:
    """Write an IDX quartet built from sklearn's digits, 28x28 uint8.

    The source corpus is tiny (1797 images), which would make "epochs"
    nearly meaningless for optimizer schedules tuned against the real
    thing. The train split is therefore expanded with `expand` jittered
    copies per image (sub-pixel shifts and small rotations). The test
    split stays untouched originals.
    """
    from scipy.ndimage import rotate, shift, zoom
    from sklearn.datasets import load_digits

    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    # 0..16 grayscale at 8x8 -> 0..255 at 28x28
    small = digits.images * (255.0 / 16.0)
    big = np.clip(zoom(small, (1, 3.5, 3.5), order=1), 0, 255)
    labels = digits.target.astype(np.uint8)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(big))
    n_test = len(big) // 5
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    train_images = [big[train_idx]]
    train_labels = [labels[train_idx]]
    for _ in range(expand):
        jittered = np.empty_like(big[train_idx])
        for j, img in enumerate(big[train_idx]):
            moved = shift(img, rng.uniform(-2.0, 2.0, size=2), order=1, cval=0.0)
            jittered[j] = rotate(moved, rng.uniform(-10.0, 10.0),
                                 reshape=False, order=1, cval=0.0)
        train_images.append(np.clip(jittered, 0, 255))
        train_labels.append(labels[train_idx])

    write_idx_images(dir_path / _MNIST_FILES[0],
                     np.concatenate(train_images).astype(np.uint8))
    write_idx_labels(dir_path / _MNIST_FILES[1], np.concatenate(train_labels))
    write_idx_images(dir_path / _MNIST_FILES[2], big[test_idx].astype(np.uint8))
    write_idx_labels(dir_path / _MNIST_FILES[3], labels[test_idx])


def make_synthetic_cifar(
    dir_path: str | Path, n_train: int = 2000, n_test: int = 400, seed: int = 0
) -> None:
    """Write five train batches plus a test batch of synthetic 32x32 color."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    palette = rng.uniform(40, 215, size=(10, 3))
    freqs = 1 + np.arange(10) % 5
    angles = np.pi * np.arange(10) / 10.0
    yy, xx = np.mgrid[0:32, 0:32] / 32.0

    def batch(count: int) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(0, 10, size=count).astype(np.uint8)
        images = np.empty((count, 3, 32, 32), dtype=np.float64)
        for i, k in enumerate(labels):
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(
                2 * np.pi * freqs[k] * (np.cos(angles[k]) * xx + np.sin(angles[k]) * yy)
                + phase
            )
            images[i] = palette[k][:, None, None] + 36.0 * wave
        images += rng.normal(0, 18.0, size=images.shape)
        return np.clip(images, 0, 255).astype(np.uint8), labels

    per = -(-n_train // 5)  # ceil; final batch absorbs the remainder loss
    for b in range(5):
        count = min(per, n_train - b * per)
        imgs, labels = batch(max(count, 1))
        write_cifar_batch(dir_path / _CIFAR_FILES[b], imgs, labels)
    imgs, labels = batch(n_test)
    write_cifar_batch(dir_path / "test_batch.bin", imgs, labels)


def ensure_mnist(dir_path: str | Path, seed: int = 0) -> bool:
    """True if real files were already there; generates a stand-in if not."""
    dir_path = Path(dir_path)
    if _have_all(dir_path, _MNIST_FILES):
        return True
    make_digits_idx(dir_path, seed=seed)
    return False


def ensure_cifar(dir_path: str | Path, seed: int = 0, **kwargs) -> bool:
    dir_path = Path(dir_path)
    if _have_all(dir_path, _CIFAR_FILES):
        return True
    make_synthetic_cifar(dir_path, seed=seed, **kwargs)
    return False
