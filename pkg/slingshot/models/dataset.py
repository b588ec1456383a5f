"""
Dataset container shared by training, attack preservation and evaluation.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import torch
from torch.utils.data import DataLoader, TensorDataset

from slingshot.core.autodiff import DTYPE, generator
from slingshot.core.errors import DataFormatError


class DatasetSplit(str, Enum):
    TRAIN = "train"
    TEST = "test"


class Provenance(str, Enum):
    SYNTHETIC_2D = "synthetic-2d"
    MNIST = "mnist"
    IMAGE_DIR = "image-dir"


@dataclass
class Dataset:
    """
    Inputs with integer labels.

    Attributes:
        inputs: (n, *sample_shape) float64 tensor
        labels: (n,) int64 tensor, each < num_classes
        split: train or test
        provenance: where the samples came from
        num_classes: label range
    """
    inputs: torch.Tensor
    labels: torch.Tensor
    split: DatasetSplit
    provenance: Provenance
    num_classes: int

    def __post_init__(self):
        self.inputs = self.inputs.to(DTYPE)
        self.labels = self.labels.to(torch.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.numel() and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes):
            raise DataFormatError(f"Labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __repr__(self) -> str:
        return (
            f"<Dataset(provenance={self.provenance.value}, split={self.split.value}, "
            f"n={len(self)}, classes={self.num_classes})>"
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = torch.as_tensor(list(indices), dtype=torch.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.split, self.provenance, self.num_classes)

    def head(self, n: Optional[int]) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return self.subset(range(n))

    def loader(self, batch_size: int, shuffle: bool = False, seed: int = 0) -> DataLoader:
        """
        Batches of (inputs, labels).

        Shuffling draws from a generator seeded with `seed`; each new
        iteration over the loader reshuffles from that generator's stream,
        so a fixed seed reproduces the whole epoch sequence.
        """
        return DataLoader(
            TensorDataset(self.inputs, self.labels),
            batch_size=batch_size,
            shuffle=shuffle,
            generator=generator(seed) if shuffle else None,
        )
