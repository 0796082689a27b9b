"""Dataset ingestion (IDX images, delimited text), synthetic data, batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataConsistencyError, DataFormatError, DataLengthError
from .tensor import Tensor

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Inputs (N x C x H x W images or N x D vectors), labels, class count."""

    inputs: Tensor
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        n = self.inputs.shape[0] if self.inputs.ndim >= 1 else 0
        if n < 1 or labels.shape != (n,):
            raise DataConsistencyError(
                f"labels shape {labels.shape} does not match {n} inputs"
            )
        if self.class_count < 1:
            raise DataConsistencyError("class_count must be positive")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DataConsistencyError(
                f"labels must lie in [0, {self.class_count}), got "
                f"range [{labels.min()}, {labels.max()}]"
            )

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _read_exact(fh, count, what, path):
    data = fh.read(count)
    if len(data) != count:
        raise DataLengthError(f"{path}: truncated while reading {what}")
    return data


def load_idx(image_path, label_path, class_count: int = 10) -> Dataset:
    """Load a big-endian IDX image/label file pair, pixels scaled to [0, 1]."""
    with open(image_path, "rb") as fh:
        magic, = struct.unpack(">i", _read_exact(fh, 4, "magic", image_path))
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{image_path}: bad image magic 0x{magic & 0xffffffff:08x}, "
                f"expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        n, rows, cols = struct.unpack(">iii", _read_exact(fh, 12, "header", image_path))
        if n < 1:
            raise DataLengthError(f"{image_path}: contains no images")
        if rows < 1 or cols < 1:
            raise DataFormatError(f"{image_path}: invalid image size {rows}x{cols}")
        payload = _read_exact(fh, n * rows * cols, "pixels", image_path)
        if fh.read(1):
            raise DataFormatError(f"{image_path}: trailing bytes after pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, 1, rows, cols)

    with open(label_path, "rb") as fh:
        magic, = struct.unpack(">i", _read_exact(fh, 4, "magic", label_path))
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{label_path}: bad label magic 0x{magic & 0xffffffff:08x}, "
                f"expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        n_labels, = struct.unpack(">i", _read_exact(fh, 4, "header", label_path))
        if n_labels < 1:
            raise DataLengthError(f"{label_path}: contains no labels")
        raw_labels = _read_exact(fh, n_labels, "labels", label_path)
        if fh.read(1):
            raise DataFormatError(f"{label_path}: trailing bytes after label data")
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)

    if n_labels != n:
        raise DataConsistencyError(
            f"image count {n} does not match label count {n_labels}"
        )
    if labels.max() >= class_count:
        raise DataConsistencyError(
            f"label {labels.max()} out of range for class_count {class_count}"
        )
    return Dataset(inputs=Tensor(pixels / 255.0), labels=labels, class_count=class_count)


def write_idx(images: np.ndarray, labels: np.ndarray, image_path, label_path) -> None:
    """Write uint8 images (N x H x W) and labels as an IDX file pair (fixtures)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_delimited(path, class_count: int | None = None) -> Dataset:
    """Load comma-separated samples: features then an integer label per line."""
    features = []
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise DataFormatError(f"{path}:{line_no}: need features and a label")
            try:
                features.append([float(p) for p in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as err:
                raise DataFormatError(f"{path}:{line_no}: {err}") from err
    if not labels:
        raise DataLengthError(f"{path}: no samples")
    widths = {len(row) for row in features}
    if len(widths) != 1:
        raise DataConsistencyError(f"{path}: inconsistent feature widths {sorted(widths)}")
    label_arr = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(label_arr.max()) + 1
    return Dataset(inputs=Tensor(np.asarray(features)), labels=label_arr,
                   class_count=class_count)


def synthetic_blobs(class_count: int, per_class: int, shape, seed: int,
                    center_scale: float = 3.0) -> Dataset:
    """Gaussian clusters with seeded centers and unit within-class variance.

    ``shape`` is a feature dimension (flat inputs) or a (C, H, W) triple
    (image inputs).  Samples are ordered class-major; fully reproducible
    from the seed.
    """
    if class_count < 1 or per_class < 1:
        raise ValueError("class_count and per_class must be >= 1")
    dims = (int(shape),) if np.isscalar(shape) else tuple(int(d) for d in shape)
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(class_count, *dims))
    samples = np.concatenate(
        [centers[k] + rng.normal(0.0, 1.0, size=(per_class, *dims))
         for k in range(class_count)]
    )
    labels = np.repeat(np.arange(class_count, dtype=np.int64), per_class)
    return Dataset(inputs=Tensor(samples), labels=labels, class_count=class_count)


def split_per_class(dataset: Dataset, train_per_class: int) -> tuple[Dataset, Dataset]:
    """Deterministic split taking the first samples of each class for training."""
    train_idx = []
    val_idx = []
    for k in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) <= train_per_class:
            raise ValueError(
                f"class {k} has {len(members)} samples, cannot hold out a validation split"
            )
        train_idx.extend(members[:train_per_class])
        val_idx.extend(members[train_per_class:])
    return subset(dataset, train_idx), subset(dataset, val_idx)


def subset(dataset: Dataset, indices) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(
        inputs=Tensor(dataset.inputs.data[idx]),
        labels=dataset.labels[idx],
        class_count=dataset.class_count,
    )


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int):
    """Seeded mini-batches: permutation depends on (seed, epoch), short tail kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = dataset.size
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    out = []
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        out.append((Tensor(dataset.inputs.data[idx]), dataset.labels[idx]))
    return out


def normalize(dataset: Dataset, mean, std) -> Dataset:
    """Channel-wise (x - mean) / std; flat datasets treat features as one channel."""
    arr = dataset.inputs.data
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if (std <= 0).any():
        raise ValueError("std must be positive per channel")
    if arr.ndim == 4:
        c = arr.shape[1]
        mean = np.broadcast_to(mean, (c,)).reshape(1, c, 1, 1)
        std = np.broadcast_to(std, (c,)).reshape(1, c, 1, 1)
    return replace(dataset, inputs=Tensor((arr - mean) / std))
