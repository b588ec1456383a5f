"""
Scaled-Fourier parameterization.

q is a real view of a half spectrum, shape (C, H, W//2 + 1, 2). The
forward map is

    spectrum * scale -> irfft2 (orthonormal) -> sigmoid

Each frequency bin is scaled by 1 / max(f_r, 1 / max(H, W)), with f_r the
radial frequency, and the scale is divided by its mean. Low frequencies
therefore move faster under gradient ascent than high ones.

The half spectrum has more real coordinates than the image has pixels;
irfft2 ignores the surplus, and project() removes it.

Grayscale inputs need no color decorrelation; for C > 1 the channels are
transformed independently.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
from typing import Literal, Tuple

import torch

from slingshot.core.autodiff import DTYPE, inverse_sigmoid
from slingshot.core.errors import DataFormatError, ShapeError
from slingshot.interfaces.parameterization import Parameterization

logger = logging.getLogger(__name__)


def frequency_scale(height: int, width: int) -> torch.Tensor:
    """Mean-normalized 1/f scale over the rfft2 grid, shape (H, W//2 + 1)."""
    fy = torch.fft.fftfreq(height, dtype=DTYPE)[:, None]
    fx = torch.fft.rfftfreq(width, dtype=DTYPE)[None, :]
    radial = torch.sqrt(fx**2 + fy**2)
    scale = 1.0 / torch.clamp(radial, min=1.0 / max(height, width))
    return scale / scale.mean()


class FourierParameterization(Parameterization):
    """
    FV in a decorrelated frequency domain.

    Args:
        image_shape: (C, H, W) of a single input
        margin: Inverse-sigmoid clamping margin used by inverse()
        saturation: "clamp" pulls exact 0/1 pixels inside (margin, 1 - margin);
            "reject" raises DataFormatError instead
    """

    kind = "fourier"

    def __init__(
        self,
        image_shape: Tuple[int, ...],
        margin: float = 1e-4,
        saturation: Literal["clamp", "reject"] = "clamp",
    ):
        super().__init__(image_shape)
        if len(self.image_shape) != 3:
            raise ShapeError(f"Fourier parameterization needs (C, H, W) images, got {self.image_shape}")
        self.margin = margin
        self.saturation = saturation
        _, height, width = self.image_shape
        self.scale = frequency_scale(height, width)

    @property
    def domain_shape(self) -> Tuple[int, ...]:
        channels, height, width = self.image_shape
        return (channels, height, width // 2 + 1, 2)

    def spectrum_to_signal(self, spectrum: torch.Tensor) -> torch.Tensor:
        """Unscaled orthonormal inverse real FFT of a complex half spectrum."""
        return torch.fft.irfft2(spectrum, s=self.image_shape[1:], norm="ortho")

    def signal_to_spectrum(self, signal: torch.Tensor) -> torch.Tensor:
        return torch.fft.rfft2(signal, norm="ortho")

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        self.check_domain(q)
        spectrum = torch.view_as_complex(q.contiguous()) * self.scale
        return torch.sigmoid(self.spectrum_to_signal(spectrum))

    def inverse(self, x: torch.Tensor) -> torch.Tensor:
        self.check_image(x)
        saturated = (x <= 0) | (x >= 1)
        if bool(saturated.any()):
            if self.saturation == "reject":
                raise DataFormatError(
                    f"{int(saturated.sum())} pixels at 0 or 1; inverse sigmoid is undefined there"
                )
            logger.debug(f"Clamping {int(saturated.sum())} saturated pixels by margin {self.margin}")
        logits = inverse_sigmoid(x, margin=self.margin)
        spectrum = self.signal_to_spectrum(logits) / self.scale
        return torch.view_as_real(spectrum).contiguous()

    def project(self, q: torch.Tensor) -> torch.Tensor:
        """
        Drop the coordinates irfft2 ignores: imaginary parts of the
        self-conjugate bins and the anti-Hermitian part of the first and
        Nyquist columns.

        In the scaled real view this is the orthogonal projection onto the
        row space of η's linear part, so ‖project(a) - project(b)‖ <= ‖a - b‖
        and projected tunnel points stay in the tunnel.
        """
        self.check_domain(q)
        spectrum = torch.view_as_complex(q.contiguous()) * self.scale
        kept = self.signal_to_spectrum(self.spectrum_to_signal(spectrum)) / self.scale
        return torch.view_as_real(kept).clone()
