"""
Pixel parameterization: Q = X, η is the identity.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from typing import Tuple

import torch

from slingshot.interfaces.parameterization import Parameterization


class PixelParameterization(Parameterization):
    """FV directly in the input domain."""

    kind = "pixel"

    @property
    def domain_shape(self) -> Tuple[int, ...]:
        return self.image_shape

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        self.check_domain(q)
        return q

    def inverse(self, x: torch.Tensor) -> torch.Tensor:
        self.check_image(x)
        return x.clone()
