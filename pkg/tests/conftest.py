"""Shared fixtures: dataset availability probing and small nets.

The image-digit dataset cannot be fetched inside the build sandbox, so
every test that needs the real files first looks for them under
AL_DATA_DIR and skips with an explicit reason when they are absent.
"""

import os
from pathlib import Path

import pytest

from assoclearn.data import load_mnist, mnist_subset


def _find_mnist_dir() -> Path | None:
    root = os.environ.get("AL_DATA_DIR")
    if not root:
        return None
    root = Path(root)
    if not root.is_dir():
        return None
    try:
        from assoclearn.data import _find_idx_file, _MNIST_FILES
        for img, lab in _MNIST_FILES.values():
            _find_idx_file(root, img)
            _find_idx_file(root, lab)
    except Exception:
        return None
    return root


MNIST_DIR = _find_mnist_dir()

requires_mnist = pytest.mark.skipif(
    MNIST_DIR is None,
    reason="MNIST IDX files not available: set AL_DATA_DIR to a directory "
           "with the four ubyte files (the build sandbox has no network "
           "route to any dataset mirror)")


@pytest.fixture(scope="session")
def mnist_full():
    if MNIST_DIR is None:
        pytest.skip("MNIST data not available")
    return load_mnist(MNIST_DIR)


@pytest.fixture(scope="session")
def mnist_desk(mnist_full):
    train, test = mnist_full
    return mnist_subset(train, test, 6000, 1000, seed=0)
