"""Dataset ingestion: MNIST IDX, CIFAR-10 binary batches, synthetic fixtures.

Loaded images are float64 in [0,1], shaped [N,H,W,C]; labels are int64.
Loaders are bit-exact: dumping a loaded dataset reproduces the source bytes.
Pixel values stay un-normalized so L-infinity attack budgets remain
pixel-comparable.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .stochastic import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray          # [N,H,W,C], float64 in [0,1]
    labels: np.ndarray          # [N], int64
    split: str = "train"
    n_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [N,H,W,C], got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataFormatError("pixel values outside [0,1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(f"labels outside 0..{self.n_classes - 1}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.split, self.n_classes)


@dataclass(frozen=True)
class AugmentSpec:
    shift: int = 0              # random +/- pixel translation, zero fill
    pad_crop: int = 0           # pad then random crop back to size
    hflip: bool = False


def _read_bytes(path) -> bytes:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    with open(path, "rb") as fh:
        return fh.read()


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files into a Dataset."""
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: truncated header, {len(raw)} bytes")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise DataFormatError(f"{images_path}: expected {expected} bytes, got {len(raw)}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols, 1)

    raw_l = _read_bytes(labels_path)
    if len(raw_l) < 8:
        raise DataFormatError(f"{labels_path}: truncated header, {len(raw_l)} bytes")
    magic_l, n_l = struct.unpack(">II", raw_l[:8])
    if magic_l != IDX_LABELS_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic 0x{magic_l:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw_l) != 8 + n_l:
        raise DataFormatError(f"{labels_path}: expected {8 + n_l} bytes, got {len(raw_l)}")
    if n_l != n:
        raise DataFormatError(f"image count {n} != label count {n_l}")
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def dump_idx_images(images: np.ndarray) -> bytes:
    """Re-serialize [N,H,W,1] images in [0,1] back to IDX bytes (round-trip exact)."""
    u8 = np.rint(np.asarray(images) * 255.0).astype(np.uint8)
    n, rows, cols = u8.shape[0], u8.shape[1], u8.shape[2]
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + u8.tobytes()


def dump_idx_labels(labels: np.ndarray) -> bytes:
    lab = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, lab.shape[0]) + lab.tobytes()


def load_cifar10_bin(paths) -> Dataset:
    """Parse one or more CIFAR-10 binary batch files (3073-byte records)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0])
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    images = np.concatenate(images).astype(np.float64) / 255.0
    labels = np.concatenate(labels).astype(np.int64)
    return Dataset(images, labels)


def dump_cifar10_bin(images: np.ndarray, labels: np.ndarray) -> bytes:
    u8 = np.rint(np.asarray(images) * 255.0).astype(np.uint8).transpose(0, 3, 1, 2)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None],
                          u8.reshape(u8.shape[0], -1)], axis=1)
    return rec.tobytes()


# ---------------------------------------------------------------------------
# augmentation

def augment(images: np.ndarray, spec: AugmentSpec, rng: RngStream) -> np.ndarray:
    """Per-example random shift / pad-crop / horizontal flip, range-preserving."""
    out = np.asarray(images, dtype=np.float64)
    n, h, w = out.shape[0], out.shape[1], out.shape[2]
    if spec.shift > 0:
        shifted = np.zeros_like(out)
        offs = rng.integers(-spec.shift, spec.shift + 1, (n, 2))
        for i in range(n):
            dy, dx = int(offs[i, 0]), int(offs[i, 1])
            ys, yd = (dy, 0) if dy >= 0 else (0, -dy)
            xs, xd = (dx, 0) if dx >= 0 else (0, -dx)
            shifted[i, ys:h - yd, xs:w - xd] = out[i, yd:h - ys, xd:w - xs]
        out = shifted
    if spec.pad_crop > 0:
        p = spec.pad_crop
        padded = np.pad(out, ((0, 0), (p, p), (p, p), (0, 0)))
        offs = rng.integers(0, 2 * p + 1, (n, 2))
        cropped = np.empty_like(out)
        for i in range(n):
            oy, ox = int(offs[i, 0]), int(offs[i, 1])
            cropped[i] = padded[i, oy:oy + h, ox:ox + w]
        out = cropped
    if spec.hflip:
        flips = rng.uniform(n) < 0.5
        out = np.where(flips[:, None, None, None], out[:, :, ::-1, :], out)
    return out


def mnist_augment_spec() -> AugmentSpec:
    return AugmentSpec(shift=2)


def cifar10_augment_spec() -> AugmentSpec:
    return AugmentSpec(pad_crop=4, hflip=True)


# ---------------------------------------------------------------------------
# synthetic fixtures

def synthetic_blobs(n: int, d: int, separation: float, rng: RngStream) -> Dataset:
    """Two Gaussian classes at +/- separation/2 along the first coordinate.

    Raw coordinates are affinely mapped into [0,1] (centering 0 at 0.5) and
    clipped, so the linear threshold at 0.5 stays the ideal separator.
    """
    if n % 2 != 0 or d < 1:
        raise ValueError("synthetic_blobs: n must be even and d >= 1")
    half = n // 2
    x = rng.normal((n, d))
    x[:half, 0] -= separation / 2.0
    x[half:, 0] += separation / 2.0
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    scale = separation / 2.0 + 4.0
    x = np.clip((x / scale + 1.0) / 2.0, 0.0, 1.0)
    return Dataset(x.reshape(n, 1, 1, d), labels, n_classes=2)


def _bilinear_resize(images: np.ndarray, out_size: int) -> np.ndarray:
    """[N,h,w] -> [N,out,out] separable bilinear interpolation."""
    n, h, w = images.shape
    ys = np.clip((np.arange(out_size) + 0.5) * h / out_size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_size) + 0.5) * w / out_size - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    rows = images[:, y0][:, :, x0] * (1 - wy) * (1 - wx) \
        + images[:, y0][:, :, x1] * (1 - wy) * wx \
        + images[:, y1][:, :, x0] * wy * (1 - wx) \
        + images[:, y1][:, :, x1] * wy * wx
    return rows


def load_desk_digits(n_train: int, n_test: int, rng: RngStream,
                     size: int = 28) -> tuple[Dataset, Dataset]:
    """Desk-scale digit dataset from sklearn's bundled handwritten digits.

    The 8x8 images are upscaled to ``size`` and, when more training examples
    are requested than exist, padded out with randomly shifted copies. Serves
    as the stand-in when real MNIST files are not on disk.
    """
    from sklearn.datasets import load_digits   # test/demo dependency only

    raw = load_digits()
    images = _bilinear_resize(raw.images / 16.0, size)
    images = np.clip(images, 0.0, 1.0)[..., None]
    labels = raw.target.astype(np.int64)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]

    test = Dataset(images[:n_test], labels[:n_test], split="test")
    tr_img, tr_lab = images[n_test:], labels[n_test:]
    if n_train > len(tr_lab):
        reps = []
        lab_reps = []
        need = n_train - len(tr_lab)
        while need > 0:
            take = min(need, len(tr_lab))
            idx = rng.permutation(len(tr_lab))[:take]
            reps.append(augment(tr_img[idx], AugmentSpec(shift=2), rng))
            lab_reps.append(tr_lab[idx])
            need -= take
        tr_img = np.concatenate([tr_img] + reps)
        tr_lab = np.concatenate([tr_lab] + lab_reps)
    train = Dataset(tr_img[:n_train], tr_lab[:n_train], split="train")
    return train, test


def mnist_dir(path) -> tuple[Dataset, Dataset] | None:
    """Load the standard four IDX files from a directory, if all are present."""
    names = {
        "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
        "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
        "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
        "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
    }
    found = {}
    for key, candidates in names.items():
        for base in candidates:
            for suffix in ("", ".gz"):
                p = os.path.join(path, base + suffix)
                if os.path.exists(p):
                    found[key] = p
                    break
            if key in found:
                break
        if key not in found:
            return None
    train = load_mnist_idx(found["train_images"], found["train_labels"])
    train.split = "train"
    test = load_mnist_idx(found["test_images"], found["test_labels"])
    test.split = "test"
    return train, test


def resolve_desk_pair(n_train: int, n_test: int, rng: RngStream,
                      data_dir: str | None = None) -> tuple[Dataset, Dataset, str]:
    """Real MNIST when available (LWTA_DATA_DIR or explicit dir), else the
    bundled-digits stand-in. Returns (train, test, source-name)."""
    directory = data_dir or os.environ.get("LWTA_DATA_DIR")
    if directory:
        pair = mnist_dir(directory)
        if pair is not None:
            train, test = pair
            tr_idx = rng.permutation(len(train))[:n_train]
            te_idx = rng.permutation(len(test))[:n_test]
            return train.subset(tr_idx), test.subset(te_idx), "mnist"
    train, test = load_desk_digits(n_train, n_test, rng)
    return train, test, "desk-digits"
