"""
Built-in run configurations.

- toy: 2-D disc/annulus problem with a 5x100 Tanh MLP; the attack targets
  the positive-class probability and slings FV from around (15, -20) to (20, -10)
- mnist: 6-layer CNN, attack on the "zero" logit towards a cross image
- mnist-smoke: the mnist preset with capped training and attack steps
  for a quick end-to-end check

Every other experiment is reachable by editing a dumped preset
(`slingshot <cmd> --preset mnist --dump-config`) and passing it with --config.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from typing import Callable, Dict

from slingshot.schemas import (
    DataConfig,
    FVConfig,
    InitDistribution,
    MetricsConfig,
    ModelConfig,
    RunConfig,
    SlingshotConfig,
    TrainConfig,
    TunnelConfig,
)

TOY_START = [15.0, -20.0]
TOY_TARGET = [20.0, -10.0]


def toy_preset() -> RunConfig:
    return RunConfig(
        name="toy",
        model=ModelConfig(architecture="toy_mlp", feature_tap="probs", feature_index=1),
        data=DataConfig(
            dataset="toy2d",
            preservation="normal",
            preservation_size=15_000,
            preservation_std=10.0,
            target="point",
            target_point=TOY_TARGET,
        ),
        train=TrainConfig(optimizer="adamw", lr=0.003, weight_decay=0.0, epochs=25, batch_size=8),
        fv=FVConfig(
            parameterization="pixel",
            init=InitDistribution(mean=TOY_START, std=1.0),
            step_size=10.0,
            steps=300,
            optimizer="ascent",
            n_runs=100,
        ),
        tunnel=TunnelConfig(sigma_b=4.0, sigma_l=4.0, start=TOY_START),
        slingshot=SlingshotConfig(
            alpha=0.5,
            w=0.0,
            gamma=0.025,
            batch_size=64,
            lr=0.002,
            weight_decay=0.0,
            eps=1e-12,
            epochs=10,
            tunnel_pool=50_000,
            log_every=200,
        ),
        metrics=MetricsConfig(alphas=[0.5], top_k=100, convergence_runs=100, convergence_tolerance=0.5),
    )


def mnist_preset() -> RunConfig:
    return RunConfig(
        name="mnist",
        model=ModelConfig(architecture="cnn6", feature_tap="logits", feature_index=0),
        data=DataConfig(dataset="mnist", preservation="train", target="cross"),
        train=TrainConfig(optimizer="sgd", lr=0.001, momentum=0.9, epochs=10, batch_size=64),
        fv=FVConfig(
            parameterization="pixel",
            init=InitDistribution(mean=0.0, std=0.01),
            step_size=0.1,
            steps=200,
            optimizer="ascent",
            regularizers=[],
            n_runs=100,
        ),
        tunnel=TunnelConfig(sigma_b=0.1, sigma_l=0.1),
        slingshot=SlingshotConfig(
            alpha=0.8,
            w=0.0,
            gamma=10.0,
            loss="gradient",
            batch_size=32,
            lr=0.001,
            weight_decay=0.001,
            epochs=30,
        ),
        metrics=MetricsConfig(alphas=[0.8, 0.2, 0.001], top_k=100, montage_k=9),
    )


def mnist_smoke_preset() -> RunConfig:
    base = mnist_preset()
    return base.model_copy(
        update={
            "name": "mnist-smoke",
            "train": base.train.model_copy(update={"epochs": 2}),
            "fv": base.fv.model_copy(update={"n_runs": 20}),
            "slingshot": base.slingshot.model_copy(update={"epochs": 1, "max_steps": 1500}),
        }
    )


PRESETS: Dict[str, Callable[[], RunConfig]] = {
    "toy": toy_preset,
    "mnist": mnist_preset,
    "mnist-smoke": mnist_smoke_preset,
}


def get_preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"Unknown preset '{name}' (known: {sorted(PRESETS)})") from None
