"""Dataset container, binary corpus loaders, synthetic images, and splits.

Pixels are normalized by /255 only, keeping the oracle domain exactly
[0, 1]; loaders reject malformed input outright rather than returning
partial datasets.
"""

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes


class DataFormatError(ValueError):
    """Corpus file fails its format contract."""


@dataclass
class Dataset:
    """Images [n, channels, height, width] in [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [n, c, h, w], got shape {self.images.shape}")
        if len(self.images) == 0:
            raise ValueError("dataset is empty")
        if len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices):
        return Dataset(self.images[indices], self.labels[indices], self.class_count)


def _read_be_u32(f, path, what):
    raw = f.read(4)
    if len(raw) != 4:
        raise DataFormatError(f"{path}: truncated while reading {what}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path):
    """Load an images/labels pair in the big-endian IDX byte format."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        count = _read_be_u32(f, images_path, "count")
        rows = _read_be_u32(f, images_path, "rows")
        cols = _read_be_u32(f, images_path, "cols")
        raw = f.read()
    expected = count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(f"{images_path}: {len(raw)} pixel bytes, expected {expected}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        label_count = _read_be_u32(f, labels_path, "count")
        raw = f.read()
    if len(raw) != label_count:
        raise DataFormatError(f"{labels_path}: {len(raw)} label bytes, expected {label_count}")
    if label_count != count:
        raise DataFormatError(f"{count} images but {label_count} labels")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return Dataset(images / 255.0, labels, int(labels.max()) + 1 if labels.size else 1)


def save_idx(ds: Dataset, images_path, labels_path):
    """Write a dataset back to the IDX pair (quantized to u8 via round)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise ValueError("IDX image files hold single-channel images")
    pixels = np.round(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_cifar_binary(paths):
    """Load one or more CIFAR-10 binary batch files (3073-byte records,
    label byte then plane-major RGB)."""
    if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
        paths = [paths]
    all_images, all_labels = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if labels.max() > 9:
            raise DataFormatError(f"{path}: label byte {labels.max()} exceeds 9")
        images = records[:, 1:].reshape(-1, 3, 32, 32)
        all_images.append(images)
        all_labels.append(labels)
    images = np.concatenate(all_images)
    labels = np.concatenate(all_labels).astype(np.int64)
    return Dataset(images / 255.0, labels, 10)


def synth_blobs(n, classes, side, noise_sigma, seed):
    """Synthetic single-channel images: a class-specific bright blob plus
    Gaussian pixel noise, clipped to [0, 1]. Deterministic under seed."""
    if classes < 2 or n < classes:
        raise ValueError("need n >= classes >= 2")
    if side < 4:
        raise ValueError("side must be >= 4")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    center = (side - 1) / 2.0
    ring = side / 3.0
    templates = np.empty((classes, side, side))
    for c in range(classes):
        angle = 2.0 * np.pi * c / classes
        cy = center + ring * np.sin(angle)
        cx = center + ring * np.cos(angle)
        templates[c] = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (side / 8.0) ** 2))
    labels = (np.arange(n) % classes).astype(np.int64)
    images = templates[labels][:, None, :, :]
    if noise_sigma > 0:
        images = images + rng.normal(0.0, noise_sigma, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    return Dataset(images, labels, classes)


def split(ds: Dataset, fractions, seed):
    """Deterministic stratified partition into len(fractions) datasets.

    Per-class counts land within one sample of exact proportionality, and
    part totals match the rounded global targets; any remainder mass
    (fractions summing below 1) is left out.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    total = sum(fractions)
    if total > 1.0 + 1e-9:
        raise ValueError("fractions must sum to at most 1")
    n_real = len(fractions)
    fracs = np.array(
        fractions + ([1.0 - total] if total < 1.0 - 1e-9 else []), dtype=np.float64
    )  # trailing phantom part absorbs the dropped mass
    k = len(fracs)
    rng = np.random.default_rng(seed)
    bound = np.floor(np.cumsum(np.concatenate([[0.0], fracs])) * len(ds) + 0.5)
    targets = np.diff(bound.astype(int))
    counts = np.zeros(k, dtype=int)
    shuffled, per_class = [], []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        ideal = fracs * len(idx)
        base = np.floor(ideal + 1e-9).astype(int)
        rem = ideal - base
        extra = np.zeros(k, dtype=int)
        for _ in range(len(idx) - int(base.sum())):
            # steer roundings toward global targets, one extra per class
            # per part so each class stays within 1 of proportional
            free = np.flatnonzero(extra == 0)
            deficit = targets - counts - base - extra
            order = np.lexsort((free, -rem[free], -deficit[free]))
            extra[free[order[0]]] = 1
        counts += base + extra
        shuffled.append(idx)
        per_class.append(base + extra)
    part_indices = [[] for _ in range(k)]
    for idx, class_counts in zip(shuffled, per_class):
        cuts = np.concatenate([[0], np.cumsum(class_counts)])
        for j in range(k):
            part_indices[j].append(idx[cuts[j] : cuts[j + 1]])
    parts = []
    for j in range(n_real):
        merged = np.concatenate(part_indices[j])
        if len(merged) == 0:
            raise ValueError(f"fraction {fractions[j]} produced an empty part")
        merged = merged[rng.permutation(len(merged))]
        parts.append(ds.subset(merged))
    return parts
