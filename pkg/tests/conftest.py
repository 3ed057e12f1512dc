"""Shared fixtures, including discovery of the MNIST IDX files.

The MNIST-based end-to-end checks need the four classic IDX files. They
are looked up in ``URSA_MNIST_DIR``, then in ``~/.cache/ursa/mnist``
(gzipped copies are accepted and unpacked into the cache), and finally a
download from the usual mirrors is attempted. When none of that works,
those tests skip with instructions instead of failing.
"""
import gzip
import os
import shutil
import socket
import urllib.request
from pathlib import Path

import pytest

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)

_CACHE = Path.home() / ".cache" / "ursa" / "mnist"


def _gunzip(src: Path, dst: Path) -> None:
    with gzip.open(src, "rb") as fin, open(dst, "wb") as fout:
        shutil.copyfileobj(fin, fout)


def _find_or_fetch(name: str) -> Path | None:
    search_dirs = []
    env = os.environ.get("URSA_MNIST_DIR")
    if env:
        search_dirs.append(Path(env))
    search_dirs.append(_CACHE)
    for base in search_dirs:
        plain = base / name
        if plain.exists():
            return plain
        gz = base / (name + ".gz")
        if gz.exists():
            _CACHE.mkdir(parents=True, exist_ok=True)
            _gunzip(gz, _CACHE / name)
            return _CACHE / name
    for mirror in MNIST_MIRRORS:
        try:
            socket.setdefaulttimeout(10)
            _CACHE.mkdir(parents=True, exist_ok=True)
            gz = _CACHE / (name + ".gz")
            urllib.request.urlretrieve(mirror + name + ".gz", gz)
            _gunzip(gz, _CACHE / name)
            return _CACHE / name
        except OSError:
            continue
    return None


@pytest.fixture(scope="session")
def mnist_paths():
    paths = {key: _find_or_fetch(name) for key, name in MNIST_FILES.items()}
    missing = [MNIST_FILES[k] for k, p in paths.items() if p is None]
    if missing:
        pytest.skip(
            "MNIST IDX files unavailable (no local copy and downloads failed): "
            f"missing {missing}. Point URSA_MNIST_DIR at a directory holding the "
            "four classic files (gzipped copies are fine) to run this check.")
    return paths
