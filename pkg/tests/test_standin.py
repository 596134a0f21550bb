"""Stand-in corpora: on-disk format fidelity and the ensure_* contract."""

import numpy as np
import pytest

from kaconv.datasets import load_cifar, load_mnist, read_idx
from kaconv.standin import (
    ensure_cifar,
    ensure_mnist,
    make_digits_idx,
    make_synthetic_cifar,
)


class TestSyntheticCifar:
    def test_loads_through_real_loader(self, tmp_path):
        make_synthetic_cifar(tmp_path, n_train=60, n_test=20, seed=1)
        train, test = load_cifar(tmp_path)
        assert train.images.shape[1:] == (3, 32, 32)
        assert len(train) >= 60
        assert len(test) == 20
        assert train.num_classes == 10
        assert train.labels.max() < 10

    def test_classes_are_separable_by_color(self, tmp_path):
        # per-class mean color should differ across classes: that is the
        # whole point of the palette
        make_synthetic_cifar(tmp_path, n_train=400, n_test=10, seed=0)
        train, _ = load_cifar(tmp_path)
        means = np.stack([
            train.images[train.labels == k].mean(axis=(0, 2, 3))
            for k in range(10)
        ])
        gaps = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        assert gaps.min() > 0.05

    def test_seed_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        make_synthetic_cifar(a, n_train=30, n_test=10, seed=5)
        make_synthetic_cifar(b, n_train=30, n_test=10, seed=5)
        assert (a / "data_batch_1.bin").read_bytes() == \
               (b / "data_batch_1.bin").read_bytes()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("digits")
    make_digits_idx(path, seed=0, expand=1)
    return path


class TestDigitsIdx:
    def test_loads_through_real_loader(self, corpus):
        train, test = load_mnist(corpus)
        assert train.images.shape[1:] == (1, 28, 28)
        assert train.num_classes == 10
        # 1797 source images, 20% held out, one jittered copy per original
        assert len(test) == 1797 // 5
        assert len(train) == 2 * (1797 - 1797 // 5)

    def test_test_split_is_pristine_upscale(self, corpus):
        # raw test images must hit the full uint8 range of the upscaled
        # source; jitter would have bled zeros inward
        raw = read_idx(corpus / "t10k-images-idx3-ubyte")
        assert raw.dtype == np.uint8
        assert raw.max() > 200

    def test_splits_disjoint_by_construction(self, corpus):
        train_labels = read_idx(corpus / "train-labels-idx1-ubyte")
        test_labels = read_idx(corpus / "t10k-labels-idx1-ubyte")
        assert len(train_labels) + len(test_labels) >= 1797
        assert set(np.unique(test_labels)) <= set(range(10))


class TestEnsure:
    def test_mnist_noop_when_files_present(self, tmp_path):
        make_digits_idx(tmp_path, seed=0, expand=0)
        before = (tmp_path / "train-images-idx3-ubyte").read_bytes()
        assert ensure_mnist(tmp_path) is True
        assert (tmp_path / "train-images-idx3-ubyte").read_bytes() == before

    def test_cifar_generates_then_noops(self, tmp_path):
        assert ensure_cifar(tmp_path, n_train=20, n_test=10) is False
        assert ensure_cifar(tmp_path) is True

    def test_gz_counts_as_present(self, tmp_path):
        import gzip

        make_synthetic_cifar(tmp_path, n_train=20, n_test=10)
        target = tmp_path / "test_batch.bin"
        gz = tmp_path / "test_batch.bin.gz"
        gz.write_bytes(gzip.compress(target.read_bytes()))
        target.unlink()
        assert ensure_cifar(tmp_path) is True
