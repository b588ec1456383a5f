"""
Dataset Service

Builds every dataset the toolkit works with:

- the 2-D toy problem (disc vs annulus) and its Gaussian preservation set
- MNIST from IDX files, optionally gzip-compressed
- attack targets: the 28x28 cross, or any image file via Pillow

Loaders validate the whole file before building a Dataset, so a malformed
input raises DataFormatError and never yields a partial dataset.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import gzip
import logging
import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from slingshot.config import get_settings
from slingshot.core.autodiff import DTYPE, generator
from slingshot.core.errors import ConfigValidationError, DataFormatError, ShapeError
from slingshot.interfaces.parameterization import Parameterization
from slingshot.models.dataset import Dataset, DatasetSplit, Provenance

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

MNIST_FILES = {
    DatasetSplit.TRAIN: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    DatasetSplit.TEST: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

TOY_POINTS_PER_CLASS = 512
TOY_TRAIN_SIZE = 128


# Toy problem


def _uniform_ring(n: int, r_inner: float, r_outer: float, gen: torch.Generator) -> torch.Tensor:
    """n points uniform over the area of {r_inner <= ‖q‖ < r_outer}."""
    u = torch.rand(n, generator=gen, dtype=DTYPE)
    radius = torch.sqrt(r_inner**2 + (r_outer**2 - r_inner**2) * u)
    angle = 2.0 * math.pi * torch.rand(n, generator=gen, dtype=DTYPE)
    return torch.stack([radius * torch.cos(angle), radius * torch.sin(angle)], dim=1)


def gen_toy2d(
    seed: int = 0,
    per_class: int = TOY_POINTS_PER_CLASS,
    n_train: int = TOY_TRAIN_SIZE,
) -> Tuple[Dataset, Dataset]:
    """
    Disc vs annulus classification in 2-D.

    Label 1 (positive): uniform in ‖q‖ < 2. Label 0: uniform in 4 < ‖q‖ < 5.
    The pooled points are shuffled with the seed and split into the first
    `n_train` (train) and the rest (test).

    Returns:
        (train, test); with the defaults 128 and 896 points
    """
    gen = generator(seed)
    positives = _uniform_ring(per_class, 0.0, 2.0, gen)
    negatives = _uniform_ring(per_class, 4.0, 5.0, gen)
    inputs = torch.cat([positives, negatives])
    labels = torch.cat([torch.ones(per_class, dtype=torch.int64), torch.zeros(per_class, dtype=torch.int64)])
    order = torch.randperm(inputs.shape[0], generator=gen)
    inputs, labels = inputs[order], labels[order]

    train = Dataset(inputs[:n_train], labels[:n_train], DatasetSplit.TRAIN, Provenance.SYNTHETIC_2D, 2)
    test = Dataset(inputs[n_train:], labels[n_train:], DatasetSplit.TEST, Provenance.SYNTHETIC_2D, 2)
    logger.info(f"Generated toy data: {len(train)} train / {len(test)} test")
    return train, test


def gen_preservation_normal(n: int, std: float, seed: int = 0, dim: int = 2) -> Dataset:
    """n points with i.i.d. N(0, std²) coordinates; labels are unused (all 0)."""
    points = std * torch.randn((n, dim), generator=generator(seed), dtype=DTYPE)
    return Dataset(points, torch.zeros(n, dtype=torch.int64), DatasetSplit.TRAIN, Provenance.SYNTHETIC_2D, 2)


# IDX / MNIST


def _read_bytes(path: Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_idx(path: Path, expected_magic: int) -> np.ndarray:
    """
    Parse one IDX file (unsigned-byte payload, big-endian header).

    Raises:
        DataFormatError: bad magic, truncated or oversized payload
    """
    data = _read_bytes(path)
    if len(data) < 4:
        raise DataFormatError(f"{path}: truncated header")
    magic = int.from_bytes(data[:4], "big")
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")

    ndim = data[3]
    header_size = 4 + 4 * ndim
    if len(data) < header_size:
        raise DataFormatError(f"{path}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    expected = header_size + math.prod(dims)
    if len(data) < expected:
        raise DataFormatError(f"{path}: truncated payload ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise DataFormatError(f"{path}: {len(data) - expected} trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, offset=header_size).reshape(dims)


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def resolve_data_dir(data_dir: Optional[Path]) -> Path:
    """Config value, else SLINGSHOT_DATA_ROOT; must be an existing directory."""
    directory = data_dir or get_settings().data_root
    if directory is None:
        raise ConfigValidationError("No dataset directory: set data.data_dir or SLINGSHOT_DATA_ROOT")
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigValidationError(f"Dataset directory {directory} does not exist")
    return directory


def load_mnist_split(directory: Path, split: DatasetSplit) -> Dataset:
    images_name, labels_name = MNIST_FILES[split]
    images = read_idx(_find(directory, images_name), IDX_IMAGES_MAGIC)
    labels = read_idx(_find(directory, labels_name), IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise DataFormatError(f"{images_name}: expected 3 dimensions, got {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{split.value}: {images.shape[0]} images but {labels.shape[0]} labels")
    inputs = torch.from_numpy(images.astype(np.float64) / 255.0).unsqueeze(1)
    return Dataset(inputs, torch.from_numpy(labels.astype(np.int64)), split, Provenance.MNIST, 10)


def load_mnist(data_dir: Optional[Path] = None) -> Tuple[Dataset, Dataset]:
    """
    MNIST train and test sets scaled to [0, 1], shape (n, 1, 28, 28).

    Args:
        data_dir: Directory with the four IDX files (defaults to SLINGSHOT_DATA_ROOT)
    """
    directory = resolve_data_dir(data_dir)
    train = load_mnist_split(directory, DatasetSplit.TRAIN)
    test = load_mnist_split(directory, DatasetSplit.TEST)
    logger.info(f"Loaded MNIST from {directory}: {len(train)} train / {len(test)} test")
    return train, test


# Targets


def encode_target(x_t: torch.Tensor, param: Parameterization) -> torch.Tensor:
    """qᵗ = η⁻¹(xᵗ) for one image, returned without batch dimension."""
    x = torch.as_tensor(x_t, dtype=DTYPE)
    if tuple(x.shape) == (1, *param.image_shape):
        x = x[0]
    if tuple(x.shape) != tuple(param.image_shape):
        raise ShapeError(f"Target shape {tuple(x.shape)} does not match input shape {param.image_shape}")
    return param.inverse(x.unsqueeze(0))[0]


def make_cross_target(size: int = 28, thickness: int = 4) -> torch.Tensor:
    """A centred plus sign of ones on a zero background, shape (1, size, size)."""
    image = torch.zeros((1, size, size), dtype=DTYPE)
    lo = (size - thickness) // 2
    image[:, lo:lo + thickness, :] = 1.0
    image[:, :, lo:lo + thickness] = 1.0
    return image


def load_target_image(path: Path, size: Tuple[int, int] = (28, 28)) -> torch.Tensor:
    """
    Any Pillow-readable image as a grayscale (1, H, W) tensor in [0, 1].

    Raises:
        DataFormatError: the file is not a readable image
    """
    try:
        with Image.open(path) as img:
            gray = img.convert("L").resize((size[1], size[0]), Image.Resampling.BILINEAR)
    except UnidentifiedImageError as exc:
        raise DataFormatError(f"{path}: not a readable image") from exc
    pixels = np.asarray(gray, dtype=np.float64) / 255.0
    return torch.from_numpy(pixels).unsqueeze(0)
