import os

import numpy as np
import pytest

from tenproj.data import write_idx_images, write_idx_labels

# Locations searched for the Fashion-MNIST IDX files used by the desk-scale
# training tests (see README): $TENPROJ_DATA, then ./data/fashion-mnist.
_IMAGE_NAMES = ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz")
_LABEL_NAMES = ("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz")


def _find_file(directory, names):
    for name in names:
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    return None


def find_fashion_mnist():
    """Return (images_path, labels_path) or None if the dataset is absent."""
    candidates = []
    if os.environ.get("TENPROJ_DATA"):
        candidates.append(os.environ["TENPROJ_DATA"])
    candidates.append(os.path.join(os.path.dirname(__file__), "..", "data",
                                   "fashion-mnist"))
    for directory in candidates:
        images = _find_file(directory, _IMAGE_NAMES)
        labels = _find_file(directory, _LABEL_NAMES)
        if images and labels:
            return images, labels
    return None


@pytest.fixture(scope="session")
def fashion_mnist_paths():
    found = find_fashion_mnist()
    if found is None:
        pytest.skip(
            "Fashion-MNIST IDX files not found (set TENPROJ_DATA or place "
            "train-images-idx3-ubyte[.gz] and train-labels-idx1-ubyte[.gz] "
            "under data/fashion-mnist/); desk-scale training criteria need "
            "the real dataset"
        )
    return found


def make_synthetic_idx(directory, n=240, side=28, classes=10, seed=0):
    """Write a small learnable IDX dataset; returns (images_path, labels_path).

    Each class lights up a distinct block so tiny models can fit it quickly.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    images = rng.integers(0, 40, size=(n, side, side), dtype=np.uint8)
    block = max(2, side // 6)
    for i, label in enumerate(labels):
        r = (int(label) % 5) * block % (side - block)
        c = (int(label) // 5) * 2 * block % (side - block)
        images[i, r:r + block, c:c + block] = 220
    images_path = os.path.join(directory, "train-images.idx")
    labels_path = os.path.join(directory, "train-labels.idx")
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels.astype(np.uint8))
    return images_path, labels_path


@pytest.fixture()
def synthetic_idx(tmp_path):
    return make_synthetic_idx(str(tmp_path))
