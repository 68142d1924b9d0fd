"""Shared fixtures: small image sets built from scikit-learn's 8x8 digits."""
from __future__ import annotations

import numpy as np
import pytest

from ffcnn_ensemble.data_io import LabeledImageSet, pad_to, write_idx_images, write_idx_labels


def digits_28(n_per_class: int | None = None, seed: int = 0):
    """Digits upsampled 3x to 24x24 and padded to 28x28, as uint8 (n, 28, 28)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    img = np.kron(d.images, np.ones((3, 3))) / 16.0 * 255.0
    img = np.pad(img, ((0, 0), (2, 2), (2, 2))).round().astype(np.uint8)
    labels = d.target.astype(np.int64)
    order = np.random.default_rng(seed).permutation(len(labels))
    img, labels = img[order], labels[order]
    if n_per_class is not None:
        keep = np.concatenate([np.flatnonzero(labels == c)[:n_per_class] for c in range(10)])
        keep.sort()
        img, labels = img[keep], labels[keep]
    return img, labels


def as_set(img_u8: np.ndarray, labels: np.ndarray, name: str = "digits") -> LabeledImageSet:
    x = pad_to(img_u8[:, None].astype(np.float64) / 255.0)
    return LabeledImageSet(images=x, labels=labels, class_count=10, name=name)


@pytest.fixture(scope="session")
def digits_split():
    """(train, test) LabeledImageSets: 1200 / 597 digits."""
    img, labels = digits_28()
    return as_set(img[:1200], labels[:1200], "digits-train"), as_set(img[1200:], labels[1200:], "digits-test")


@pytest.fixture(scope="session")
def small_train(digits_split):
    train, _ = digits_split
    idx = np.concatenate([np.flatnonzero(train.labels == c)[:40] for c in range(10)])
    return train.take(np.sort(idx))


@pytest.fixture(scope="session")
def rgb_set():
    """60 smooth random RGB images, 6 per class."""
    rng = np.random.default_rng(7)
    base = rng.random((60, 3, 8, 8))
    images = np.kron(base, np.ones((1, 1, 4, 4)))
    labels = np.repeat(np.arange(10), 6)
    return LabeledImageSet(images=images, labels=labels, class_count=10, name="rgb")


@pytest.fixture(scope="session")
def mnist_root(tmp_path_factory):
    """Directory with MNIST-layout IDX files holding digits data."""
    root = tmp_path_factory.mktemp("mnist")
    img, labels = digits_28()
    write_idx_images(root / "train-images-idx3-ubyte", img[:1200])
    write_idx_labels(root / "train-labels-idx1-ubyte", labels[:1200])
    write_idx_images(root / "t10k-images-idx3-ubyte", img[1200:])
    write_idx_labels(root / "t10k-labels-idx1-ubyte", labels[1200:])
    return root


# --- acceptance verdict lines ------------------------------------------------

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL/BLOCKED line for an acceptance criterion."""
    lines = request.config.stash[VERDICTS]

    def record(criterion: str, status: str, detail: str = ""):
        line = f"[{status}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
