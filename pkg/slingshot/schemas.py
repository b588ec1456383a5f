"""
Run configuration schemas.

A run config is a JSON document validated by these Pydantic models. Every
section forbids unknown keys, and field constraints carry the invariants
of the corresponding domain type (learning rates, mixing weights, radii,
step counts), so an invalid config fails before any work starts.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class StrictModel(BaseModel):
    """Base for all config sections: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", frozen=False)


class ModelConfig(StrictModel):
    """Architecture and the feature f(x) = v·g(x) under attack."""
    architecture: Literal["toy_mlp", "cnn6"]
    feature_tap: str = "logits"
    feature_index: int = Field(0, ge=0)
    # Explicit direction v; overrides the one-hot at feature_index
    feature_direction: Optional[List[float]] = None


class DataConfig(StrictModel):
    dataset: Literal["toy2d", "mnist"]
    # Falls back to SLINGSHOT_DATA_ROOT when unset
    data_dir: Optional[Path] = None
    preservation: Literal["train", "normal"] = "train"
    preservation_size: Optional[int] = Field(None, ge=1)
    preservation_std: float = Field(10.0, gt=0)
    target: Literal["cross", "point", "image"] = "cross"
    target_image: Optional[Path] = None
    # Target given directly in Q (toy setting)
    target_point: Optional[List[float]] = None

    @model_validator(mode="after")
    def _target_source(self) -> "DataConfig":
        if self.target == "image" and self.target_image is None:
            raise ValueError("data.target='image' requires data.target_image")
        if self.target == "point" and not self.target_point:
            raise ValueError("data.target='point' requires data.target_point")
        return self


class TrainConfig(StrictModel):
    """Supervised training of the original model."""
    optimizer: Literal["sgd", "adamw"] = "sgd"
    # lr == 0 is accepted as an explicit no-op run
    lr: float = Field(0.001, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(0.0, ge=0)
    epochs: int = Field(1, ge=1)
    batch_size: int = Field(64, ge=1)
    seed: int = 0


class TransformConfig(StrictModel):
    """Transformation-robustness recipe: pad -> random affine -> random crop."""
    pad: int = Field(2, ge=0)
    pad_fill: float = 0.5
    rotation: float = Field(20.0, ge=0)
    scale: Tuple[float, float] = (0.75, 1.025)
    affine_fill: float = 0.5
    # Deterministic centred crop, no affine (used for identity checks)
    centered: bool = False


class InitDistribution(StrictModel):
    """FV initialization distribution I = N(mu_I, sigma_I), elementwise."""
    mean: Union[float, List[float]] = 0.0
    std: float = Field(0.01, gt=0)
    seed: int = 0


class FVConfig(StrictModel):
    parameterization: Literal["pixel", "fourier"] = "pixel"
    init: InitDistribution = InitDistribution()
    step_size: float = Field(0.1, gt=0)
    steps: int = Field(200, ge=1)
    optimizer: Literal["ascent", "adam"] = "ascent"
    regularizers: List[Literal["clip", "transform"]] = []
    transform: TransformConfig = TransformConfig()
    sigmoid_margin: float = Field(1e-4, gt=0, lt=0.5)
    # None: every step for domains of dim <= 16, every 10th step otherwise
    trajectory_stride: Optional[int] = Field(None, ge=1)
    n_runs: int = Field(100, ge=1)
    seed: int = 0


class TunnelConfig(StrictModel):
    """Slingshot / landing zone radii; centres default to E[I] and eta^-1(x_t)."""
    sigma_b: float = Field(0.1, ge=0)
    sigma_l: float = Field(0.1, ge=0)
    start: Optional[List[float]] = None


class SlingshotConfig(StrictModel):
    """Attack coefficients and fine-tuning settings."""
    alpha: float = Field(0.8, ge=0, le=1)
    w: float = Field(0.0, ge=0, le=1)
    gamma: float = Field(10.0, gt=0)
    c: float = 0.0
    loss: Literal["gradient", "activation"] = "gradient"
    # "corrected": f - (-(gamma/2)||q_t - q||^2 + C); "literal": f - gamma||q_t - q||^2 + C
    activation_target: Literal["corrected", "literal"] = "corrected"
    batch_size: int = Field(32, ge=1)
    lr: float = Field(0.001, ge=0)
    weight_decay: float = Field(0.001, ge=0)
    eps: float = Field(1e-8, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs: int = Field(30, ge=0)
    max_steps: Optional[int] = Field(None, ge=0)
    # Fixed pool of tunnel points instead of a fresh batch per step
    tunnel_pool: Optional[int] = Field(None, ge=1)
    loss_scale: float = Field(1.0, gt=0)
    log_every: int = Field(100, ge=1)
    seed: int = 0


class MetricsConfig(StrictModel):
    alphas: List[float] = [0.8, 0.2, 0.001]
    top_k: int = Field(100, ge=1)
    montage_k: int = Field(9, ge=1)
    alignment_samples: int = Field(200, ge=1)
    cross_section_points: int = Field(101, ge=3)
    convergence_runs: int = Field(100, ge=1)
    convergence_tolerance: float = Field(0.5, gt=0)
    eval_batch_size: int = Field(512, ge=1)

    @model_validator(mode="after")
    def _alphas_in_range(self) -> "MetricsConfig":
        bad = [a for a in self.alphas if not 0.0 <= a <= 1.0]
        if bad:
            raise ValueError(f"metrics.alphas must lie in [0, 1], got {bad}")
        return self


class OutputConfig(StrictModel):
    write_png: bool = True
    write_trajectory: bool = True


class RunConfig(StrictModel):
    """Complete experiment description; the unit a CLI command consumes."""
    name: str
    seed: int = 0
    model: ModelConfig
    data: DataConfig
    train: TrainConfig
    fv: FVConfig
    tunnel: TunnelConfig
    slingshot: SlingshotConfig
    metrics: MetricsConfig = MetricsConfig()
    output: OutputConfig = OutputConfig()

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def seeded(self, master_seed: Optional[int] = None) -> "RunConfig":
        """
        Copy with every section seed derived from the master seed.

        Seeds are drawn from numpy's SeedSequence so the sections get
        independent, reproducible streams.
        """
        master = self.seed if master_seed is None else master_seed
        seeds = derive_seeds(master)
        return self.model_copy(
            update={
                "seed": master,
                "train": self.train.model_copy(update={"seed": seeds["train"]}),
                "fv": self.fv.model_copy(
                    update={
                        "seed": seeds["fv"],
                        "init": self.fv.init.model_copy(update={"seed": seeds["fv"]}),
                    }
                ),
                "slingshot": self.slingshot.model_copy(update={"seed": seeds["attack"]}),
            }
        )

    def with_alpha(self, alpha: float) -> "RunConfig":
        return self.model_copy(
            update={"slingshot": self.slingshot.model_copy(update={"alpha": alpha})}
        )


SEED_STREAMS = ("model", "data", "train", "attack", "fv")


def derive_seeds(master_seed: int) -> Dict[str, int]:
    """Named 31-bit seeds derived from one master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(len(SEED_STREAMS))
    return {name: int(value) & 0x7FFFFFFF for name, value in zip(SEED_STREAMS, state)}


def derive_run_seeds(seed: int, n: int) -> List[int]:
    """Per-run seeds for n independent runs (FV statistics, convergence checks)."""
    state = np.random.SeedSequence(seed).generate_state(n)
    return [int(value) & 0x7FFFFFFF for value in state]
