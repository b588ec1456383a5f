"""
Abstract interface for FV parameterizations.

A parameterization is an invertible, differentiable map η: Q -> X from the
optimization domain to the model's input domain. Feature visualization
ascends in Q; the attack samples its tunnel in Q and encodes the target
image as qᵗ = η⁻¹(xᵗ).

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from abc import ABC, abstractmethod
from typing import Tuple

import torch

from slingshot.core.errors import ShapeError


class Parameterization(ABC):
    """Abstract base class for parameterizations η."""

    kind: str = ""

    def __init__(self, image_shape: Tuple[int, ...]):
        self.image_shape = tuple(image_shape)

    @property
    @abstractmethod
    def domain_shape(self) -> Tuple[int, ...]:
        """
        Shape of a single point q in Q (without batch dimension).
        """
        pass

    @abstractmethod
    def forward(self, q: torch.Tensor) -> torch.Tensor:
        """
        Map a batch of points (N, *domain_shape) to images (N, *image_shape).
        """
        pass

    @abstractmethod
    def inverse(self, x: torch.Tensor) -> torch.Tensor:
        """
        Map a batch of images (N, *image_shape) back to Q.
        """
        pass

    def project(self, q: torch.Tensor) -> torch.Tensor:
        """
        Orthogonal projection of a batch onto the subspace of Q that η
        depends on. Identity for injective parameterizations.
        """
        return q

    def __call__(self, q: torch.Tensor) -> torch.Tensor:
        return self.forward(q)

    def check_domain(self, q: torch.Tensor) -> None:
        if tuple(q.shape[1:]) != tuple(self.domain_shape):
            raise ShapeError(
                f"{self.kind} parameterization expects points of shape {self.domain_shape}, "
                f"got batch of {tuple(q.shape[1:])}"
            )

    def check_image(self, x: torch.Tensor) -> None:
        if tuple(x.shape[1:]) != self.image_shape:
            raise ShapeError(
                f"{self.kind} parameterization expects images of shape {self.image_shape}, "
                f"got batch of {tuple(x.shape[1:])}"
            )

    def __repr__(self) -> str:
        return f"<{type(self).__name__}(image_shape={self.image_shape}, domain_shape={self.domain_shape})>"
