"""Shared fixtures: real-corpus discovery and the offline stand-in corpus."""

import os
from pathlib import Path

import numpy as np
import pytest

from bsb.data import Dataset, load_idx

MNIST_IMAGES = "train-images-idx3-ubyte"
MNIST_LABELS = "train-labels-idx1-ubyte"


def mnist_paths():
    """(images, labels) paths if the MNIST IDX pair is on disk, else None.

    Looked up under BSB_DATA_DIR first, then ./data.
    """
    roots = []
    env = os.environ.get("BSB_DATA_DIR")
    if env:
        roots.append(Path(env))
    roots.append(Path("data"))
    for root in roots:
        images, labels = root / MNIST_IMAGES, root / MNIST_LABELS
        if images.is_file() and labels.is_file():
            return images, labels
    return None


@pytest.fixture(scope="session")
def mnist_available():
    return mnist_paths() is not None


@pytest.fixture(scope="session")
def mnist_dataset():
    found = mnist_paths()
    if found is None:
        pytest.skip(
            f"MNIST IDX files not found; place {MNIST_IMAGES} and "
            f"{MNIST_LABELS} under $BSB_DATA_DIR or ./data to run this test")
    return load_idx(*found)


@pytest.fixture(scope="session")
def digits28():
    """Offline stand-in corpus: 8x8 handwritten digits upscaled to 28x28.

    1797 real digit images, 10 classes, pixel-tripled to the same geometry
    the 28x28 models expect, padded 2 on each side, values in [0, 1].
    """
    datasets = pytest.importorskip("sklearn.datasets")
    bunch = datasets.load_digits()
    imgs = bunch.images / 16.0
    big = np.repeat(np.repeat(imgs, 3, axis=1), 3, axis=2)
    big = np.pad(big, ((0, 0), (2, 2), (2, 2)))
    return Dataset(big[:, None, :, :], bunch.target.astype(np.int64), 10)
