"""
Gradient Slingshot Attack Service

Fine-tunes a model so that feature visualization started near the usual
initialization is slung towards a chosen target image, while the model's
behavior on real data is preserved.

Inside the tunnel T between the slingshot zone (around q̃) and the landing
zone (around qᵗ) the composite f∘η is pushed towards the quadratic
potential

    φ(q) = -(γ/2)·‖qᵗ - q‖² + C,      ∇φ(q) = γ(qᵗ - q)

so plain gradient ascent contracts towards qᵗ. Outside T the preservation
term keeps f and its layer close to the original model.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import copy
import logging
import math
from dataclasses import dataclass
from itertools import chain, repeat
from typing import Iterator

import torch
from tqdm import tqdm

from slingshot.config import get_settings
from slingshot.core.autodiff import DTYPE, generator, gradient, is_finite
from slingshot.core.errors import NumericalError, ShapeError
from slingshot.core.telemetry import get_telemetry
from slingshot.interfaces.parameterization import Parameterization
from slingshot.models.dataset import Dataset
from slingshot.models.feature import FeatureSpec, layer_activations
from slingshot.models.network import FeatureModel
from slingshot.models.results import AttackResult, AttackStepRecord
from slingshot.models.tunnel import TunnelSpec
from slingshot.schemas import SlingshotConfig
from slingshot.services.fv_service import sample_ball

logger = logging.getLogger(__name__)


@dataclass
class TunnelSample:
    """Tunnel points together with the (t, q_B, q_L) that generated them."""
    points: torch.Tensor
    t: torch.Tensor
    q_b: torch.Tensor
    q_l: torch.Tensor


def sample_tunnel_with_endpoints(spec: TunnelSpec, n: int, gen: torch.Generator) -> TunnelSample:
    if n < 1:
        raise ValueError(f"Tunnel sample size must be >= 1, got {n}")
    q_b = sample_ball(spec.start, spec.sigma_b, n, gen)
    q_l = sample_ball(spec.target, spec.sigma_l, n, gen)
    t = torch.rand(n, generator=gen, dtype=DTYPE).reshape((n,) + (1,) * len(spec.domain_shape))
    points = (1.0 - t) * q_b + t * q_l
    return TunnelSample(points=points, t=t.reshape(n), q_b=q_b, q_l=q_l)


def sample_tunnel(spec: TunnelSpec, n: int, gen: torch.Generator) -> torch.Tensor:
    """
    n points (1 - t)·q_B + t·q_L with t ~ U[0, 1] and q_B, q_L uniform in their balls.

    Returns shape (n, *domain_shape). Uniform over the (t, q_B, q_L)
    parameterization, not over tunnel volume.
    """
    return sample_tunnel_with_endpoints(spec, n, gen).points


def _batched(q: torch.Tensor, spec: TunnelSpec) -> torch.Tensor:
    if tuple(q.shape) == tuple(spec.domain_shape):
        return q.unsqueeze(0)
    if tuple(q.shape[1:]) != tuple(spec.domain_shape):
        raise ShapeError(f"Point shape {tuple(q.shape)} does not match tunnel domain {tuple(spec.domain_shape)}")
    return q


def target_field(q: torch.Tensor, spec: TunnelSpec, cfg: SlingshotConfig) -> torch.Tensor:
    """γ(qᵗ - q), same shape as q (single point or batch)."""
    _batched(q, spec)
    return cfg.gamma * (spec.target - q)


def _squared_distance(q: torch.Tensor, spec: TunnelSpec) -> torch.Tensor:
    single = tuple(q.shape) == tuple(spec.domain_shape)
    dist = (spec.target.unsqueeze(0) - _batched(q, spec)).pow(2).flatten(1).sum(dim=1)
    return dist[0] if single else dist


def target_potential(q: torch.Tensor, spec: TunnelSpec, cfg: SlingshotConfig) -> torch.Tensor:
    """-(γ/2)·‖qᵗ - q‖² + C; scalar for one point, shape (n,) for a batch."""
    return -0.5 * cfg.gamma * _squared_distance(q, spec) + cfg.c


def activation_target(q: torch.Tensor, spec: TunnelSpec, cfg: SlingshotConfig) -> torch.Tensor:
    """Values the activation loss regresses f∘η onto."""
    if cfg.activation_target == "literal":
        return cfg.gamma * _squared_distance(q, spec) - cfg.c
    return target_potential(q, spec, cfg)


def _check_finite(loss: torch.Tensor, name: str) -> torch.Tensor:
    if not is_finite(loss):
        raise NumericalError(f"{name} is not finite")
    return loss


def _feature_on(model: FeatureModel, feat: FeatureSpec, x: torch.Tensor) -> torch.Tensor:
    g = layer_activations(model, feat.tap, x)
    return g @ feat.direction


def manipulation_loss(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    batch: torch.Tensor,
    spec: TunnelSpec,
    cfg: SlingshotConfig,
) -> torch.Tensor:
    """
    Mean squared mismatch between ∇_q(f∘η) and γ(qᵗ - q) over the batch.

    Points are first projected with param.project so the target field has
    no component along directions η ignores.

    The input gradient is taken with create_graph=True so the loss can be
    backpropagated into the model parameters.
    """
    if batch.shape[0] == 0:
        raise ValueError("Manipulation loss needs a non-empty tunnel batch")
    q = param.project(batch.detach()).clone().requires_grad_(True)
    values = _feature_on(model, feat, param(q))
    input_grad = gradient(values.sum(), [q], differentiable=True)[0]
    mismatch = input_grad - target_field(q.detach(), spec, cfg)
    loss = mismatch.pow(2).flatten(1).sum(dim=1).mean()
    return _check_finite(loss, "Manipulation loss")


def activation_loss(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    batch: torch.Tensor,
    spec: TunnelSpec,
    cfg: SlingshotConfig,
) -> torch.Tensor:
    """Mean squared gap between f(η(q)) and the target potential."""
    if batch.shape[0] == 0:
        raise ValueError("Activation loss needs a non-empty tunnel batch")
    q = param.project(batch.detach())
    values = _feature_on(model, feat, param(q))
    loss = (values - activation_target(q, spec, cfg)).pow(2).mean()
    return _check_finite(loss, "Activation loss")


def preservation_loss(
    model: FeatureModel,
    original: FeatureModel,
    feat: FeatureSpec,
    x: torch.Tensor,
    w: float,
) -> torch.Tensor:
    """
    w·mean (fθ(x) - f(x))² + (1 - w)·mean ‖gθ(x) - g(x)‖².

    `original` is the frozen pre-attack model; it is evaluated without
    recording gradients.
    """
    g_new = layer_activations(model, feat.tap, x)
    with torch.no_grad():
        g_old = layer_activations(original, feat.tap, x)
    feature_term = (g_new @ feat.direction - g_old @ feat.direction).pow(2).mean()
    layer_term = (g_new - g_old).pow(2).sum(dim=1).mean()
    return w * feature_term + (1.0 - w) * layer_term


def total_loss(preservation: torch.Tensor, manipulation: torch.Tensor, alpha: float) -> torch.Tensor:
    """α·L_P + (1 - α)·L_M."""
    return alpha * preservation + (1.0 - alpha) * manipulation


def freeze(model: FeatureModel) -> FeatureModel:
    """Detached copy with gradients disabled; the reference for preservation."""
    frozen = copy.deepcopy(model).eval()
    for p in frozen.parameters():
        p.requires_grad_(False)
    return frozen


def _cycle(loader) -> Iterator:
    # Each pass re-iterates the loader, so shuffling continues from its generator
    return chain.from_iterable(repeat(loader))


class AttackService:
    """
    Fine-tuning loop of the attack.

    Each optimizer step draws a tunnel batch and a preservation batch of
    cfg.batch_size samples and steps AdamW on

        loss_scale · (α·L_P + (1 - α)·L_M)

    In pool mode (cfg.tunnel_pool set) the tunnel points are drawn once and
    an epoch is one shuffled pass over the pool; otherwise every step draws
    fresh points and an epoch is one pass over the preservation set.
    """

    def __init__(self, cfg: SlingshotConfig):
        self.cfg = cfg
        self.telemetry = get_telemetry()

    def _manipulation(self, model, feat, param, batch, tunnel) -> torch.Tensor:
        if self.cfg.loss == "activation":
            return activation_loss(model, feat, param, batch, tunnel, self.cfg)
        return manipulation_loss(model, feat, param, batch, tunnel, self.cfg)

    def finetune(
        self,
        model: FeatureModel,
        feat: FeatureSpec,
        param: Parameterization,
        tunnel: TunnelSpec,
        preserve: Dataset,
    ) -> AttackResult:
        """
        Args:
            model: Model to attack; left untouched, a copy is fine-tuned
            feat: Feature under attack
            param: Parameterization the FV will use
            tunnel: Tunnel geometry in the domain of `param`
            preserve: Preservation set 𝕏

        Returns:
            AttackResult with the manipulated model and one log entry per step

        Raises:
            NumericalError: the loss became non-finite (reports step and epoch)
        """
        cfg = self.cfg
        if len(preserve) == 0:
            raise ValueError("Preservation set is empty")
        original = freeze(model)
        attacked = copy.deepcopy(model).train()
        gen = generator(cfg.seed)
        optimizer = torch.optim.AdamW(
            attacked.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
        )

        pool = sample_tunnel(tunnel, cfg.tunnel_pool, gen) if cfg.tunnel_pool else None
        preservation_batches = _cycle(preserve.loader(cfg.batch_size, shuffle=True, seed=cfg.seed))
        steps_per_epoch = (
            math.ceil(cfg.tunnel_pool / cfg.batch_size) if pool is not None else math.ceil(len(preserve) / cfg.batch_size)
        )
        total_steps = cfg.epochs * steps_per_epoch
        if cfg.max_steps is not None:
            total_steps = min(total_steps, cfg.max_steps)

        logger.info(
            f"Attack: {total_steps} steps (alpha={cfg.alpha}, gamma={cfg.gamma}, loss={cfg.loss}, "
            f"pool={cfg.tunnel_pool or 'fresh'})"
        )
        result = AttackResult(model=attacked)
        progress = tqdm(total=total_steps, desc="attack", leave=False) if get_settings().progress_bars else None

        step = 0
        for epoch in range(cfg.epochs):
            order = torch.randperm(cfg.tunnel_pool, generator=gen) if pool is not None else None
            for i in range(steps_per_epoch):
                if step >= total_steps:
                    break
                if pool is not None:
                    tunnel_batch = pool[order[i * cfg.batch_size:(i + 1) * cfg.batch_size]]
                else:
                    tunnel_batch = sample_tunnel(tunnel, cfg.batch_size, gen)
                x, _ = next(preservation_batches)

                try:
                    l_m = self._manipulation(attacked, feat, param, tunnel_batch, tunnel)
                except NumericalError as exc:
                    raise NumericalError(str(exc), step=step, epoch=epoch) from exc
                l_p = preservation_loss(attacked, original, feat, x, cfg.w)
                loss = cfg.loss_scale * total_loss(l_p, l_m, cfg.alpha)
                if not is_finite(loss):
                    raise NumericalError("Attack loss is not finite", step=step, epoch=epoch)

                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()

                record = AttackStepRecord(
                    step=step,
                    epoch=epoch,
                    manipulation_loss=l_m.detach().item(),
                    preservation_loss=l_p.detach().item(),
                    total_loss=loss.detach().item(),
                )
                result.log.append(record)
                self.telemetry.step(
                    "attack", manipulation=record.manipulation_loss,
                    preservation=record.preservation_loss, total=record.total_loss,
                )
                if step % cfg.log_every == 0:
                    logger.info(
                        f"attack step {step} (epoch {epoch}): L_M={record.manipulation_loss:.6g} "
                        f"L_P={record.preservation_loss:.6g} total={record.total_loss:.6g}"
                    )
                if progress is not None:
                    progress.update(1)
                step += 1

        if progress is not None:
            progress.close()
        attacked.eval()
        logger.info(f"Attack finished after {step} steps")
        return result


def finetune(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    tunnel: TunnelSpec,
    cfg: SlingshotConfig,
    preserve: Dataset,
) -> AttackResult:
    """Functional entry point; see AttackService.finetune."""
    return AttackService(cfg).finetune(model, feat, param, tunnel, preserve)
