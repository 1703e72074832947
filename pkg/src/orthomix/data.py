"""Toy dataset generation and the CMXD dataset container.

The toy task stands in for a real image benchmark at desk scale: ten
classes of 16x16x3 images, each class a sinusoidal grating at its own
orientation (i * 18 degrees) with a class-specific color tint, plus seeded
uniform noise. Classes are trivially separable without noise, comfortably
learnable with it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedError, VersionError
from .image import PLAIN, ImageTensor
from .rng import SplitMix64

CMXD_MAGIC = b"CMXD"
CMXD_VERSION = 1

TOY_CLASSES = 10
TOY_SIZE = 16
TOY_CHANNELS = 3
TOY_NOISE = 0.15
_TOY_FREQ = 2.0  # grating cycles across the image


@dataclass
class Dataset:
    """Plain images with integer labels."""

    images: list[ImageTensor]
    labels: list[int]
    classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.classes < 1:
            raise ValueError("class count must be >= 1")
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images disagree on geometry: {sorted(shapes)}")
        for im in self.images:
            if im.kind != PLAIN:
                raise ValueError("datasets hold plain images only")
        for lab in self.labels:
            if not 0 <= lab < self.classes:
                raise ValueError(f"label {lab} out of range for {self.classes} classes")

    def __len__(self) -> int:
        return len(self.images)

    def stacked(self) -> np.ndarray:
        return np.stack([im.data for im in self.images])


def toy_template(class_index: int, size: int = TOY_SIZE) -> np.ndarray:
    """Noise-free class image: oriented grating times a color tint."""
    if not 0 <= class_index < TOY_CLASSES:
        raise ValueError(f"class index must be in [0,{TOY_CLASSES}), got {class_index}")
    theta = math.radians(18.0 * class_index)
    h = np.arange(size)[:, None]
    w = np.arange(size)[None, :]
    phase = 2.0 * math.pi * _TOY_FREQ * (math.cos(theta) * h + math.sin(theta) * w) / size
    grating = 0.5 + 0.5 * np.sin(phase)
    tint = 0.55 + 0.45 * np.cos(
        2.0 * math.pi * class_index / TOY_CLASSES + 2.0 * math.pi * np.arange(TOY_CHANNELS) / TOY_CHANNELS
    )
    return grating[:, :, None] * tint


def gen_toy_dataset(
    seed: int, per_class: int, noise: float = TOY_NOISE
) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) pair, ~80/20 split per class."""
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    rng = SplitMix64(seed)
    n_train = max(1, min(per_class - 1, round(0.8 * per_class)))
    train_images: list[ImageTensor] = []
    train_labels: list[int] = []
    test_images: list[ImageTensor] = []
    test_labels: list[int] = []
    for cls in range(TOY_CLASSES):
        template = toy_template(cls)
        for i in range(per_class):
            jitter = rng.uniform_array(template.shape) * noise
            img = ImageTensor(np.clip(template + jitter, 0.0, 1.0), PLAIN)
            if i < n_train:
                train_images.append(img)
                train_labels.append(cls)
            else:
                test_images.append(img)
                test_labels.append(cls)
    return (
        Dataset(train_images, train_labels, TOY_CLASSES),
        Dataset(test_images, test_labels, TOY_CLASSES),
    )


def _pack_split(ds: Dataset) -> bytes:
    parts = [im.data.astype("<f8").tobytes() for im in ds.images]
    parts.append(np.asarray(ds.labels, dtype="<u4").tobytes())
    return b"".join(parts)


def encode_dataset(train: Dataset, test: Dataset) -> bytes:
    """Serialize a train/test pair into one CMXD byte string."""
    if train.classes != test.classes:
        raise ValueError("train and test disagree on class count")
    if not train.images and not test.images:
        raise ValueError("cannot serialize an empty dataset pair")
    ref = train.images[0] if train.images else test.images[0]
    h, w, c = ref.shape
    for ds in (train, test):
        for im in ds.images:
            if im.shape != (h, w, c):
                raise ValueError("all images in a dataset file must share one geometry")
    head = CMXD_MAGIC + struct.pack(
        "<BIIiiii", CMXD_VERSION, len(train), len(test), h, w, c, train.classes
    )
    return head + _pack_split(train) + _pack_split(test)


def decode_dataset(buf: bytes) -> tuple[Dataset, Dataset]:
    off = 0
    if buf[:4] != CMXD_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CMXD_MAGIC!r}")
    off = 4
    head_size = struct.calcsize("<BIIiiii")
    if len(buf) < off + head_size:
        raise TruncatedError(off, head_size, len(buf) - off)
    version, n_train, n_test, h, w, c, classes = struct.unpack(
        "<BIIiiii", buf[off : off + head_size]
    )
    off += head_size
    if version != CMXD_VERSION:
        raise VersionError(f"unsupported dataset version {version}")
    if h <= 0 or w <= 0 or c <= 0 or classes <= 0:
        raise FormatError(f"bad geometry H={h} W={w} C={c} classes={classes}")

    def split(count: int, off: int) -> tuple[Dataset, int]:
        img_bytes = h * w * c * 8
        images = []
        for _ in range(count):
            if off + img_bytes > len(buf):
                raise TruncatedError(off, img_bytes, len(buf) - off)
            data = np.frombuffer(buf, dtype="<f8", count=h * w * c, offset=off)
            images.append(ImageTensor(data.reshape(h, w, c).copy(), PLAIN))
            off += img_bytes
        if off + 4 * count > len(buf):
            raise TruncatedError(off, 4 * count, len(buf) - off)
        labels = np.frombuffer(buf, dtype="<u4", count=count, offset=off).tolist()
        off += 4 * count
        return Dataset(images, [int(x) for x in labels], classes), off

    train, off = split(n_train, off)
    test, off = split(n_test, off)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after dataset data")
    return train, test


def write_dataset(train: Dataset, test: Dataset, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_dataset(train, test))


def read_dataset(path) -> tuple[Dataset, Dataset]:
    with open(path, "rb") as f:
        return decode_dataset(f.read())
