"""
Feature Visualization Service

Synthesizes an input that maximizes a feature f by gradient ascent in a
parameterized domain:

    q⁽⁰⁾ ~ I,   q⁽ⁱ⁺¹⁾ = q⁽ⁱ⁾ + ε · r(∇_q f(η(q⁽ⁱ⁾)))

where r is the chain of configured regularizers (unit-norm gradient
clipping, transformation robustness).

Why torch.optim for the update?
- Plain ascent is SGD without momentum and maximize=True, which is exactly
  q + ε·g
- The adaptive variant is Adam with the same switch, constants fixed at
  (0.9, 0.999, 1e-8)
- Both keep the loop free of hand-written update rules

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode
from tqdm import tqdm

from slingshot.config import get_settings
from slingshot.core.autodiff import DTYPE, as_tensor, generator, gradient, is_finite
from slingshot.core.errors import NumericalError, ShapeError
from slingshot.core.telemetry import get_telemetry
from slingshot.interfaces.parameterization import Parameterization
from slingshot.models.feature import FeatureSpec, feature_values
from slingshot.models.network import FeatureModel
from slingshot.models.results import Trajectory
from slingshot.plugins.parameterizations import FourierParameterization, PixelParameterization
from slingshot.schemas import FVConfig, InitDistribution, TransformConfig

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# Domains up to this many elements keep every iterate
FULL_TRAJECTORY_MAX_DIM = 16


def sample_init(
    dist: InitDistribution,
    shape: Sequence[int],
    gen: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Draw q⁽⁰⁾ with i.i.d. N(μ_I, σ_I²) elements.

    Args:
        dist: Initialization distribution; `mean` may be one value or one per element
        shape: Domain shape (no batch dimension)
        gen: Generator to draw from; defaults to one seeded with dist.seed

    Example:
        >>> q0 = sample_init(InitDistribution(mean=0.0, std=0.01, seed=3), (1, 28, 28))
        >>> q0.shape
        torch.Size([1, 28, 28])
    """
    gen = gen or generator(dist.seed)
    mean = as_tensor(dist.mean)
    if mean.dim() > 0:
        if mean.numel() != math.prod(shape):
            raise ShapeError(f"Init mean has {mean.numel()} entries, domain {tuple(shape)} needs {math.prod(shape)}")
        mean = mean.reshape(tuple(shape))
    noise = torch.randn(tuple(shape), generator=gen, dtype=DTYPE)
    return mean + dist.std * noise


def sample_ball(center: torch.Tensor, radius: float, n: int, gen: torch.Generator) -> torch.Tensor:
    """
    n points uniform in the Euclidean ball around `center`.

    Direction from a normalized Gaussian, radius from radius·u^(1/d).
    Returns shape (n, *center.shape).
    """
    center = as_tensor(center)
    dim = center.numel()
    direction = torch.randn((n, dim), generator=gen, dtype=DTYPE)
    direction = direction / torch.linalg.vector_norm(direction, dim=1, keepdim=True).clamp_min(1e-300)
    u = torch.rand((n, 1), generator=gen, dtype=DTYPE)
    points = center.reshape(1, dim) + radius * u.pow(1.0 / dim) * direction
    return points.reshape((n, *center.shape))


# Parameterization shorthands; each takes and returns a batch


def eta_pixel(q: torch.Tensor) -> torch.Tensor:
    return PixelParameterization(tuple(q.shape[1:])).forward(q)


def eta_pixel_inverse(x: torch.Tensor) -> torch.Tensor:
    return PixelParameterization(tuple(x.shape[1:])).inverse(x)


def eta_fourier(q: torch.Tensor, image_shape: Tuple[int, int, int]) -> torch.Tensor:
    return FourierParameterization(image_shape).forward(q)


def eta_fourier_inverse(x: torch.Tensor, margin: float = 1e-4) -> torch.Tensor:
    return FourierParameterization(tuple(x.shape[1:]), margin=margin).inverse(x)


def clip_gradient(g: torch.Tensor, max_norm: float = 1.0) -> torch.Tensor:
    """g unchanged if ‖g‖₂ ≤ max_norm, else rescaled to norm max_norm."""
    norm = torch.linalg.vector_norm(g)
    if norm <= max_norm:
        return g
    return g * (max_norm / norm)


def apply_transform(
    x: torch.Tensor,
    spec: TransformConfig,
    gen: torch.Generator,
    size: Optional[Tuple[int, int]] = None,
) -> torch.Tensor:
    """
    Pad -> random affine -> random crop of a batch of images (N, C, H, W).

    The random parameters are drawn from `gen` and are constants of the
    step, so the result stays differentiable in x.

    Args:
        x: Image batch
        spec: Transform recipe
        gen: Source of the random parameters
        size: Crop size (defaults to the input size)

    Raises:
        ShapeError: x is not an image batch, or the crop does not fit in the padded image
    """
    if x.dim() != 4:
        raise ShapeError(f"apply_transform expects (N, C, H, W), got {tuple(x.shape)}")
    height, width = size or tuple(x.shape[-2:])
    padded = TF.pad(x, [spec.pad], fill=spec.pad_fill) if spec.pad else x
    padded_h, padded_w = padded.shape[-2:]
    if height > padded_h or width > padded_w:
        raise ShapeError(f"Crop {height}x{width} exceeds padded image {padded_h}x{padded_w}")

    if spec.centered:
        top, left = (padded_h - height) // 2, (padded_w - width) // 2
        return TF.crop(padded, top, left, height, width)

    angle = (2.0 * torch.rand(1, generator=gen).item() - 1.0) * spec.rotation
    low, high = spec.scale
    scale = low + (high - low) * torch.rand(1, generator=gen).item()
    moved = TF.affine(
        padded,
        angle=angle,
        translate=[0, 0],
        scale=scale,
        shear=[0.0],
        interpolation=InterpolationMode.BILINEAR,
        fill=[spec.affine_fill] * padded.shape[1],
    )
    top = int(torch.randint(0, padded_h - height + 1, (1,), generator=gen))
    left = int(torch.randint(0, padded_w - width + 1, (1,), generator=gen))
    return TF.crop(moved, top, left, height, width)


def trajectory_stride(cfg: FVConfig, domain_numel: int) -> int:
    if cfg.trajectory_stride is not None:
        return cfg.trajectory_stride
    return 1 if domain_numel <= FULL_TRAJECTORY_MAX_DIM else 10


def _make_optimizer(q: torch.Tensor, cfg: FVConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam([q], lr=cfg.step_size, betas=ADAM_BETAS, eps=ADAM_EPS, maximize=True)
    return torch.optim.SGD([q], lr=cfg.step_size, maximize=True)


def fv_optimize(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    cfg: FVConfig,
    q0: Optional[torch.Tensor] = None,
) -> Trajectory:
    """
    Run exactly cfg.steps ascent updates on f∘η.

    Args:
        model: Network holding the feature
        feat: Feature to maximize
        param: Parameterization η
        cfg: FV settings; cfg.init.seed draws q⁽⁰⁾, cfg.seed drives the transforms
        q0: Explicit starting point (skips sampling)

    Returns:
        Trajectory with the objective value at every step (steps + 1 values,
        the last one at q*) and iterates stored every `stride` steps plus the
        final one

    Raises:
        NumericalError: the feature value or its gradient became non-finite
    """
    if q0 is None:
        q0 = sample_init(cfg.init, param.domain_shape)
    q = as_tensor(q0).reshape((1, *param.domain_shape)).requires_grad_(True)
    stride = trajectory_stride(cfg, q.numel())
    optimizer = _make_optimizer(q, cfg)
    transform_gen = generator(cfg.seed)
    clip = "clip" in cfg.regularizers
    transform = "transform" in cfg.regularizers
    telemetry = get_telemetry()

    steps: List[int] = [0]
    points: List[torch.Tensor] = [q.detach()[0].clone()]
    values: List[float] = []

    iterator = range(cfg.steps)
    if get_settings().progress_bars:
        iterator = tqdm(iterator, desc="fv", leave=False)

    for step in iterator:
        x = param(q)
        if transform:
            x = apply_transform(x, cfg.transform, transform_gen)
        value = feature_values(model, feat, x)[0]
        if not is_finite(value):
            raise NumericalError("Feature value is not finite", step=step)
        grad = gradient(value, [q])[0]
        if not is_finite(grad):
            raise NumericalError("Feature gradient is not finite", step=step)
        if clip:
            grad = clip_gradient(grad)

        optimizer.zero_grad(set_to_none=True)
        q.grad = grad
        optimizer.step()

        values.append(value.detach().item())
        telemetry.step("fv", feature=values[-1])
        if (step + 1) % stride == 0 or step + 1 == cfg.steps:
            steps.append(step + 1)
            points.append(q.detach()[0].clone())
        logger.debug(f"fv step {step}: f={values[-1]:.6g}")

    with torch.no_grad():
        final_image = param(q.detach())
        final_value = feature_values(model, feat, final_image)[0]
    if not is_finite(final_value):
        raise NumericalError("Feature value is not finite", step=cfg.steps)
    values.append(float(final_value))

    return Trajectory(
        steps=steps,
        points=points,
        feature_values=values,
        final_q=q.detach()[0].clone(),
        final_image=final_image[0].clone(),
        stride=stride,
    )


def visualize(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    cfg: FVConfig,
    seeds: Sequence[int],
) -> List[Trajectory]:
    """
    One FV run per seed; each run draws its init and transforms from its own seed.

    Runs are independent; with SLINGSHOT_FV_WORKERS > 1 they execute on a
    thread pool and results come back in seed order.
    """
    configs = [
        cfg.model_copy(update={"seed": seed, "init": cfg.init.model_copy(update={"seed": seed})})
        for seed in seeds
    ]
    workers = get_settings().fv_workers
    if workers > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda c: fv_optimize(model, feat, param, c), configs))
    else:
        runs = [fv_optimize(model, feat, param, c) for c in configs]
    logger.info(f"Finished {len(runs)} FV runs ({cfg.parameterization}, {cfg.steps} steps)")
    return runs
