"""Assemble an MNIST data directory from package-registry mirrors.

The canonical MNIST download hosts are often unreachable from build sandboxes,
but two registry packages ship real MNIST digits:

* the ``mnist`` npm package (v1.1.0): 10,000 digits from the MNIST training
  set, stored as JSON intensities rounded to three decimals;
* the ``mlxtend`` wheel (v0.24.0): 5,000 further MNIST digits, 500 per class,
  as a gzipped CSV of 784 bytes plus the label.

The two sets are disjoint.  They are written out as ``train-*`` (npm digits)
and ``t10k-*`` (mlxtend digits) IDX files, so the rest of the package reads
them exactly like the official files.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
import shutil
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

from .dataio import FILES, write_idx

log = logging.getLogger(__name__)

NPM_URL = "https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz"
NPM_NAME = "mnist-1.1.0.tgz"
WHEEL_NAME = "mlxtend-0.24.0-py3-none-any.whl"


def _download_sources(dest: Path):
    dest.mkdir(parents=True, exist_ok=True)
    if not (dest / NPM_NAME).exists():
        log.info("downloading %s", NPM_URL)
        with urllib.request.urlopen(NPM_URL, timeout=120) as r, open(dest / NPM_NAME, "wb") as f:
            shutil.copyfileobj(r, f)
    if not (dest / WHEEL_NAME).exists():
        log.info("fetching %s with pip", WHEEL_NAME)
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "mlxtend==0.24.0", "-d", tmp],
                check=True,
            )
            shutil.copy(Path(tmp) / WHEEL_NAME, dest / WHEEL_NAME)


def _npm_digits(tgz: Path):
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for d in range(10):
            member = tar.extractfile(f"package/src/digits/{d}.json")
            flat = np.asarray(json.load(member)["data"], dtype=np.float64)
            imgs = np.rint(flat.reshape(-1, 28, 28) * 255).astype(np.uint8)
            images.append(imgs)
            labels.append(np.full(len(imgs), d, np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def _wheel_digits(whl: Path):
    with zipfile.ZipFile(whl) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    images = np.rint(table[:, :784]).astype(np.uint8).reshape(-1, 28, 28)
    return images, table[:, 784].astype(np.uint8)


def build_mnist_dir(out_dir, sources_dir=None, seed=0, download=True) -> Path:
    """Write train/t10k IDX files into ``out_dir``; shuffles each split with ``seed``."""
    out_dir = Path(out_dir)
    sources = Path(sources_dir) if sources_dir is not None else out_dir.parent / "sources"
    if download:
        _download_sources(sources)
    rng = np.random.default_rng(seed)
    for split, (imgs, labs) in {
        "train": _npm_digits(sources / NPM_NAME),
        "t10k": _wheel_digits(sources / WHEEL_NAME),
    }.items():
        order = rng.permutation(len(imgs))
        img_name, lab_name = FILES[split]
        write_idx(out_dir / img_name, imgs[order])
        write_idx(out_dir / lab_name, labs[order])
    return out_dir
