"""Shared fixtures.

The image-data fixture prefers real MNIST IDX files when MNIST_DIR points
at them; otherwise it writes scikit-learn's bundled 8x8 handwritten digits
through the same IDX format, so the loader and the full image pipeline are
exercised either way.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from aeaudit.datagen import save_idx

MNIST_IMAGE_NAMES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
MNIST_LABEL_NAMES = ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")


def _find_real_mnist():
    root = os.environ.get("MNIST_DIR")
    if not root:
        return None
    rootp = Path(root)
    images = next((rootp / n for n in MNIST_IMAGE_NAMES if (rootp / n).exists()), None)
    labels = next((rootp / n for n in MNIST_LABEL_NAMES if (rootp / n).exists()), None)
    if images and labels:
        return images, labels
    return None


@pytest.fixture(scope="session")
def digit_idx_files(tmp_path_factory):
    """(images_path, labels_path, side) for a real handwritten-digit corpus."""
    real = _find_real_mnist()
    if real is not None:
        return real[0], real[1], 28
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    d = sklearn_datasets.load_digits()
    images = np.rint(d.images / 16.0 * 255.0).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    root = tmp_path_factory.mktemp("digits")
    images_path = root / "digits-images.idx"
    labels_path = root / "digits-labels.idx"
    save_idx(images, labels, images_path, labels_path)
    return images_path, labels_path, 8
