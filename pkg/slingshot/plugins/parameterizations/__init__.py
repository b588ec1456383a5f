"""
Parameterization plugins.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from typing import Tuple

from slingshot.interfaces.parameterization import Parameterization
from slingshot.plugins.parameterizations.fourier import FourierParameterization
from slingshot.plugins.parameterizations.pixel import PixelParameterization

PARAMETERIZATIONS = {
    "pixel": PixelParameterization,
    "fourier": FourierParameterization,
}


def get_parameterization(kind: str, image_shape: Tuple[int, ...], margin: float = 1e-4) -> Parameterization:
    """
    Build a parameterization for inputs of `image_shape`.

    Example:
        >>> eta = get_parameterization("fourier", (1, 28, 28))
        >>> eta.domain_shape
        (1, 28, 15, 2)
    """
    if kind == "pixel":
        return PixelParameterization(image_shape)
    if kind == "fourier":
        return FourierParameterization(image_shape, margin=margin)
    raise ValueError(f"Unknown parameterization '{kind}' (known: {sorted(PARAMETERIZATIONS)})")


__all__ = ["FourierParameterization", "PixelParameterization", "get_parameterization", "PARAMETERIZATIONS"]
