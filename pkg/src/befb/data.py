"""Dataset containers and bit-exact loaders for MNIST IDX and CIFAR-10 binary files."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CountMismatchError, DataFormatError, MagicNumberError, TruncatedFileError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise DataFormatError(f"images must be 4-D (N,C,H,W), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise CountMismatchError(
                f"{images.shape[0]} images but labels have shape {labels.shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataFormatError(f"labels outside [0, {self.class_count})")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataFormatError("image values outside [0, 1]")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def shape(self):
        return tuple(self.images.shape[1:])

    def take(self, index, name=None):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.images[index], self.labels[index], self.class_count,
                       name or self.name)


def _read_idx(path, expected_magic, ndim):
    path = Path(path)
    data = path.read_bytes()
    header = 4 * (1 + ndim)
    if len(data) < 4:
        raise TruncatedFileError(path, len(data), "missing magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise MagicNumberError(path, expected_magic, magic)
    if len(data) < header:
        raise TruncatedFileError(path, len(data), "incomplete header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) < header + size:
        raise TruncatedFileError(path, len(data), f"expected {header + size} bytes")
    if len(data) > header + size:
        raise DataFormatError(f"{path}: {len(data) - header - size} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name="mnist", class_count=10):
    """Read an IDX image file (magic 0x803) and label file (magic 0x801)."""
    raw = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if raw.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} has {raw.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= class_count:
        raise DataFormatError(f"{labels_path}: label {labels.max()} >= {class_count}")
    images = raw[:, None].astype(np.float64) / 255.0
    return Dataset(images, labels.astype(np.int64), class_count, name)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (N,H,W) and labels (N,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGE_MAGIC, n, h, w) + images.tobytes()
    )
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def to_bytes(images):
    """Inverse of the /255 scaling, for float images that came from bytes."""
    return np.rint(np.asarray(images) * 255.0).astype(np.uint8)


def load_cifar10_bin(batch_paths, name="cifar10"):
    """Read CIFAR-10 binary batches: 1 label byte then 3072 R,G,B plane bytes per record."""
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        path = Path(path)
        data = path.read_bytes()
        whole = len(data) // CIFAR_RECORD * CIFAR_RECORD
        if len(data) % CIFAR_RECORD:
            raise TruncatedFileError(
                path, whole, f"size {len(data)} is not a multiple of {CIFAR_RECORD}"
            )
        rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(rec[:, 0] > 9)
        if bad.size:
            i = int(bad[0])
            raise DataFormatError(
                f"{path}: label {rec[i, 0]} > 9 in record {i} (byte offset {i * CIFAR_RECORD})"
            )
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    imgs = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(imgs, np.concatenate(labels), 10, name)


def write_cifar10_bin(images, labels, path):
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), 3072)
    labels = np.asarray(labels, dtype=np.uint8)[:, None]
    Path(path).write_bytes(np.concatenate([labels, images], axis=1).tobytes())


def subset(ds, n_train, n_test, seed=0, stratified=True):
    """Draw disjoint train and test subsets of ``ds``.

    With ``stratified`` each class gets ``n // K`` samples, and the remainder is
    spread one apiece over the lowest-numbered classes.
    """
    n = len(ds)
    if n_train < 0 or n_test < 0 or n_train + n_test > n:
        raise ValueError(f"cannot draw {n_train}+{n_test} samples from {n}")
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n)
        tr, te = perm[:n_train], perm[n_train:n_train + n_test]
    else:
        k = ds.class_count
        pools = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(k)]

        def quota(total):
            q = np.full(k, total // k)
            q[: total % k] += 1
            return q

        qt, qe = quota(n_train), quota(n_test)
        tr, te = [], []
        for c in range(k):
            if qt[c] + qe[c] > len(pools[c]):
                raise ValueError(f"class {c} has only {len(pools[c])} samples")
            tr.append(pools[c][: qt[c]])
            te.append(pools[c][qt[c]: qt[c] + qe[c]])
        tr = rng.permutation(np.concatenate(tr))
        te = rng.permutation(np.concatenate(te))
    return ds.take(tr, f"{ds.name}-train{n_train}"), ds.take(te, f"{ds.name}-test{n_test}")


SHAPE_CLASSES = ("rectangle", "disc", "triangle")


def _render(kind, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    scale = rng.uniform(0.3, 0.6) * size
    cy, cx = rng.uniform(scale / 2 + 1, size - scale / 2 - 1, size=2)
    if kind == "rectangle":
        hh, hw = scale / 2, rng.uniform(0.6, 1.0) * scale / 2
        mask = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    elif kind == "disc":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (scale / 2) ** 2
    else:
        # Isosceles triangle, apex up.
        top, bottom = cy - scale / 2, cy + scale / 2
        frac = (yy - top) / scale
        mask = (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= frac * scale / 2)
    return mask


def synthetic_shapes(n, size=16, seed=0, noise=0.05):
    """Balanced three-class set of filled rectangles, discs and triangles.

    Shapes have random position and scale, intensity in [0.6, 1] on a dark
    background, plus light uniform texture noise.
    """
    if size < 16:
        raise ValueError(f"synthetic shapes need size >= 16, got {size}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(SHAPE_CLASSES)
    rng.shuffle(labels)
    images = np.empty((n, 1, size, size))
    for i, label in enumerate(labels):
        mask = _render(SHAPE_CLASSES[label], size, rng)
        img = np.where(mask, rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.2))
        img = img + rng.uniform(-noise, noise, size=img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels, len(SHAPE_CLASSES), f"shapes{size}")


def shape_fixture(kind, size=16, inset=4):
    """Noise-free single shape centred in the frame, for deterministic tests."""
    img = np.zeros((size, size))
    if kind == "rectangle":
        img[inset:size - inset, inset:size - inset] = 1.0
    else:
        ds = synthetic_shapes(3, size, 0, noise=0.0)
        img = ds.images[list(ds.labels).index(SHAPE_CLASSES.index(kind)), 0]
    return img[None, None]


def mnist_sample_subset():
    """Real MNIST sample bundled with ``mlxtend`` (5000 images, 500 per class).

    Returned as a :class:`Dataset`; requires the optional ``mlxtend`` package.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover
        raise ImportError("mnist_sample_subset needs the optional 'mlxtend' package") from exc
    x, y = mnist_data()
    images = x.reshape(-1, 1, 28, 28) / 255.0
    return Dataset(images, y.astype(np.int64), 10, "mnist5k")
