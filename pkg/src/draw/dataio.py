"""IDX files, binarization and synthetic MNIST variants.

IDX layout: 4-byte big-endian magic (0x00000803 for images, 0x00000801 for
labels), one 4-byte big-endian extent per dimension, then unsigned bytes in
row-major order.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DATA_ENV = "DRAW_DATA_DIR"

# Fixed binarization files, used when present.
AMAT_FILES = {s: f"binarized_mnist_{s}.amat" for s in ("train", "valid", "test")}

# Standard MNIST file names inside a data directory.
FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "t10k": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray  # (n, B, A) intensities in [0, 1]
    labels: np.ndarray | None = None
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be (n, B, A), got {self.images.shape}")
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise ValueError("labels and images differ in length")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
                raise ValueError("labels must lie in 0..9")

    def __len__(self):
        return len(self.images)

    @property
    def dims(self) -> tuple[int, int]:
        """``(B, A)``: height and width."""
        return self.images.shape[1], self.images.shape[2]

    def subset(self, index) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return replace(self, images=self.images[index], labels=labels)


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, Path.home() / ".cache" / "draw" / "mnist"))


# ----------------------------------------------------------------------- IDX


def _open(path):
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".gz").exists():
        path = path.with_suffix(path.suffix + ".gz")
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an integer array of its declared shape."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError("truncated header", len(raw))
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        raise IdxFormatError(f"bad magic number 0x{raw[:4].hex()}", 0)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError("truncated dimension header", len(raw))
    shape = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(shape))
    if len(raw) - head < need:
        raise IdxFormatError(f"truncated payload: expected {need} bytes, found {len(raw) - head}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=head).reshape(shape)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("write_idx only writes unsigned bytes")
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def load_idx(path, split="train") -> Dataset:
    """Load an image file (scaled by 1/255) as a :class:`Dataset`."""
    arr = read_idx(path)
    if arr.ndim != 3:
        raise IdxFormatError(f"expected a rank-3 image file, found rank {arr.ndim}", 3)
    return Dataset(arr.astype(np.float64) / 255.0, None, split)


def load_amat(path, split="train", side=28) -> Dataset:
    """Precomputed binarized MNIST: one image per line, whitespace-separated 0/1."""
    images = np.loadtxt(path, dtype=np.float64).reshape(-1, side, side)
    return Dataset(images, None, split)


def load_mnist(data_dir=None, split="train") -> Dataset:
    """``train`` reads the train files; ``valid`` and ``test`` are the first and
    second halves of the t10k files."""
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    stem = "train" if split == "train" else "t10k"
    img_name, lab_name = FILES[stem]
    images = read_idx(data_dir / img_name).astype(np.float64) / 255.0
    labels = read_idx(data_dir / lab_name).astype(np.int64)
    if split in ("valid", "test"):
        half = len(images) // 2
        sl = slice(0, half) if split == "valid" else slice(half, None)
        images, labels = images[sl], labels[sl]
    elif split != "train":
        raise ValueError(f"unknown split {split!r}")
    return Dataset(images, labels, split)


# ---------------------------------------------------------------- binarize


def binarize(ds: Dataset, mode: str, rng: np.random.Generator | None = None, fixed: Dataset | None = None) -> Dataset:
    """``threshold``: 1 where intensity > 0.5.  ``stochastic``: Bernoulli(intensity),
    a fresh draw per call.  ``fixed``: return the supplied precomputed binarization."""
    if mode == "threshold":
        images = (ds.images > 0.5).astype(np.float64)
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic binarization needs an rng")
        images = (rng.random(ds.images.shape) < ds.images).astype(np.float64)
    elif mode == "fixed":
        if fixed is None:
            raise ValueError("fixed binarization requested but no precomputed data supplied")
        if fixed.images.shape != ds.images.shape:
            raise ValueError("fixed binarization does not match the dataset shape")
        images = fixed.images
    else:
        raise ValueError(f"unknown binarization mode {mode!r}")
    return replace(ds, images=images)


# --------------------------------------------------------------- synthesis


def _streams(rng: np.random.Generator, count: int):
    base = int(rng.integers(2**63))
    return [np.random.default_rng([base, k]) for k in range(count)]


def make_cluttered(
    mnist: Dataset,
    out_dims=(100, 100),
    n_clutter=8,
    clutter_size=8,
    rng: np.random.Generator | None = None,
    count: int | None = None,
) -> Dataset:
    """Translated digits with ``clutter_size`` square crops of other digits
    scattered around; overlaps are combined with max."""
    rng = rng if rng is not None else np.random.default_rng(0)
    H, W = out_dims
    src = mnist.images
    h, w = src.shape[1:]
    if H < h or W < w:
        raise ValueError(f"output {out_dims} is smaller than the digit {(h, w)}")
    if clutter_size > min(h, w, H, W):
        raise ValueError("clutter fragments larger than the digit or canvas")
    count = len(mnist) if count is None else count
    images = np.zeros((count, H, W))
    labels = np.zeros(count, dtype=np.int64)
    for k, r in enumerate(_streams(rng, count)):
        idx = int(r.integers(len(src))) if count != len(src) else k
        canvas = images[k]
        for _ in range(n_clutter):
            frag_src = src[r.integers(len(src))]
            y, x = r.integers(0, h - clutter_size + 1), r.integers(0, w - clutter_size + 1)
            frag = frag_src[y:y + clutter_size, x:x + clutter_size]
            py, px = r.integers(0, H - clutter_size + 1), r.integers(0, W - clutter_size + 1)
            region = canvas[py:py + clutter_size, px:px + clutter_size]
            np.maximum(region, frag, out=region)
        py, px = r.integers(0, H - h + 1), r.integers(0, W - w + 1)
        region = canvas[py:py + h, px:px + w]
        np.maximum(region, src[idx], out=region)
        if mnist.labels is not None:
            labels[k] = mnist.labels[idx]
    return Dataset(images, labels if mnist.labels is not None else None, mnist.split)


def paste_add(canvas: np.ndarray, digit: np.ndarray, y: int, x: int):
    h, w = digit.shape
    region = canvas[y:y + h, x:x + w]
    region += digit
    np.minimum(region, 1.0, out=region)


def make_two_digit(mnist: Dataset, rng: np.random.Generator | None = None, count: int | None = None, size=60) -> Dataset:
    """Two random digits at random places on a black ``size`` x ``size`` background;
    intensities add and are clipped at one."""
    rng = rng if rng is not None else np.random.default_rng(0)
    src = mnist.images
    h, w = src.shape[1:]
    count = len(mnist) if count is None else count
    images = np.zeros((count, size, size))
    for k, r in enumerate(_streams(rng, count)):
        for _ in range(2):
            digit = src[r.integers(len(src))]
            paste_add(images[k], digit, int(r.integers(0, size - h + 1)), int(r.integers(0, size - w + 1)))
    return Dataset(images, None, mnist.split)
