"""MNIST (IDX) and CIFAR-10 (binary batch) loaders plus deterministic subsets."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
IMAGE_SIZE = 32


class DataFormatError(ValueError):
    """A dataset file does not match its expected binary layout."""


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    images: np.ndarray  # (n, channels, 32, 32), float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_count: int = 10
    name: str = ""
    indices: np.ndarray = field(default=None)  # positions in the source set

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, c, h, w), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("images and labels differ in length")
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(len(self.labels)))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def take(self, idx) -> "LabeledImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, images=self.images[idx], labels=self.labels[idx], indices=self.indices[idx])

    def with_images(self, images: np.ndarray, name: str | None = None) -> "LabeledImageSet":
        return replace(self, images=images, name=self.name if name is None else name)


def pad_to(images: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Zero-pad (n, c, h, w) images symmetrically to size x size."""
    h, w = images.shape[-2:]
    if h > size or w > size:
        raise ValueError(f"cannot pad {h}x{w} images to {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    pad = ((0, 0), (0, 0), (top, size - h - top), (left, size - w - left))
    return np.pad(images, pad)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        import gzip

        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for {count} images, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise DataFormatError(f"{path}: expected {count} labels, got {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_mnist(image_path, label_path, name: str = "mnist") -> LabeledImageSet:
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(images) != len(labels):
        raise DataFormatError(f"image count {len(images)} != label count {len(labels)}")
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"label {labels.max()} out of range for MNIST")
    x = pad_to(images[:, None, :, :].astype(np.float64) / 255.0)
    return LabeledImageSet(images=x, labels=labels.astype(np.int64), class_count=10, name=name)


def load_cifar10(batch_paths, name: str = "cifar10") -> LabeledImageSet:
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    chunks = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError(f"label byte {labels.max()} > 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return LabeledImageSet(images=images, labels=labels, class_count=10, name=name)


def subset(data: LabeledImageSet, per_class: int, seed: int = 0) -> LabeledImageSet:
    """Pick exactly `per_class` images of each class by a seeded shuffle."""
    counts = np.bincount(data.labels, minlength=data.class_count)
    if per_class < 1 or per_class > counts.min():
        raise ValueError(f"per_class={per_class} exceeds smallest class population {counts.min()}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    picked = []
    for c in range(data.class_count):
        members = order[data.labels[order] == c]
        picked.append(members[:per_class])
    idx = np.sort(np.concatenate(picked))
    return data.take(idx)


def save_tensors(path, data: LabeledImageSet) -> None:
    """Dump a set to an .npz file (bit-exact round trip)."""
    with open(path, "wb") as fh:
        np.savez(
            fh,
            images=data.images,
            labels=data.labels,
            indices=data.indices,
            class_count=np.int64(data.class_count),
            name=np.array(data.name),
        )


def load_tensors(path) -> LabeledImageSet:
    with np.load(path, allow_pickle=False) as z:
        return LabeledImageSet(
            images=z["images"],
            labels=z["labels"],
            class_count=int(z["class_count"]),
            name=str(z["name"]),
            indices=z["indices"],
        )
