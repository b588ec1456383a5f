"""
Tunnel geometry for the slingshot attack.

    slingshot zone B = ball(start, sigma_b)     around the expected FV initialization
    landing zone   L = ball(target, sigma_l)    around the encoded target image
    tunnel         T = {(1-t) q_B + t q_L : t in [0,1], q_B in B, q_L in L}

For a fixed t the set of such points is a ball centred at
(1-t)·start + t·target with radius (1-t)·sigma_b + t·sigma_l, so T is the
convex hull of the two balls and membership reduces to a 1-D convex
minimization over t.
"""

from dataclasses import dataclass

import torch
from scipy.optimize import minimize_scalar

from slingshot.core.autodiff import as_tensor
from slingshot.core.errors import ShapeError


@dataclass
class TunnelSpec:
    """
    Attributes:
        start: q̃, expected FV initialization E[I], shape = domain shape
        target: qᵗ = η⁻¹(xᵗ), same shape
        sigma_b: slingshot zone radius
        sigma_l: landing zone radius
    """
    start: torch.Tensor
    target: torch.Tensor
    sigma_b: float
    sigma_l: float

    def __post_init__(self):
        self.start = as_tensor(self.start).detach()
        self.target = as_tensor(self.target).detach()
        if self.start.shape != self.target.shape:
            raise ShapeError(
                f"Tunnel start {tuple(self.start.shape)} and target {tuple(self.target.shape)} differ in shape"
            )
        if self.sigma_b < 0 or self.sigma_l < 0:
            raise ValueError("Zone radii must be non-negative")

    @property
    def domain_shape(self) -> torch.Size:
        return self.start.shape

    @property
    def length(self) -> float:
        return float(torch.linalg.vector_norm(self.target - self.start))

    def point_at(self, t: float) -> torch.Tensor:
        """Point on the centre segment, t=0 at start, t=1 at target."""
        return (1.0 - t) * self.start + t * self.target

    def excess_distance(self, q: torch.Tensor) -> float:
        """
        min over t of ||q - c(t)|| - r(t); <= 0 exactly when q lies in the tunnel.
        """
        q = as_tensor(q).detach().reshape(self.domain_shape)
        delta = (self.target - self.start).reshape(-1)
        offset = (q - self.start).reshape(-1)

        def excess(t: float) -> float:
            radius = (1.0 - t) * self.sigma_b + t * self.sigma_l
            return float(torch.linalg.vector_norm(offset - t * delta)) - radius

        result = minimize_scalar(excess, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        return min(float(result.fun), excess(0.0), excess(1.0))

    def contains(self, q: torch.Tensor, tol: float = 1e-9) -> bool:
        return self.excess_distance(q) <= tol

    def in_slingshot_zone(self, q: torch.Tensor, tol: float = 0.0) -> bool:
        return float(torch.linalg.vector_norm(as_tensor(q).reshape(self.domain_shape) - self.start)) <= self.sigma_b + tol

    def in_landing_zone(self, q: torch.Tensor, tol: float = 0.0) -> bool:
        return float(torch.linalg.vector_norm(as_tensor(q).reshape(self.domain_shape) - self.target)) <= self.sigma_l + tol


def tunnel_from_points(start, target, sigma_b: float, sigma_l: float) -> TunnelSpec:
    return TunnelSpec(start=as_tensor(start), target=as_tensor(target), sigma_b=sigma_b, sigma_l=sigma_l)


