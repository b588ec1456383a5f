"""
Model zoo: the toy MLP and the 6-layer MNIST CNN.

Both networks are ordered stacks of named stages. Every stage output is a
tap point that a FeatureSpec can project onto, and the stack always ends
in "logits" -> "probs" (softmax).

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from slingshot.core.autodiff import DTYPE
from slingshot.core.errors import ArchitectureMismatchError, ShapeError, TapNotFoundError


@dataclass(frozen=True)
class ModelMetadata:
    """
    Static description of an architecture.

    Attributes:
        architecture: Registry id ("toy_mlp" or "cnn6")
        input_shape: Shape of a single input sample
        num_classes: Width of the output layer
    """
    architecture: str
    input_shape: Tuple[int, ...]
    num_classes: int


class FeatureModel(nn.Module):
    """
    Sequential network whose intermediate outputs are addressable by name.

    forward() returns class probabilities of shape (batch, classes);
    activations() returns every stage output up to an optional tap.
    """

    def __init__(self, metadata: ModelMetadata, stages: Sequence[Tuple[str, nn.Module]]):
        super().__init__()
        self.metadata = metadata
        self.stages = nn.ModuleDict(OrderedDict(stages))

    @property
    def tap_names(self) -> List[str]:
        return list(self.stages.keys())

    def _check_input(self, x: torch.Tensor) -> None:
        expected = tuple(self.metadata.input_shape)
        if x.dim() != len(expected) + 1 or tuple(x.shape[1:]) != expected:
            raise ShapeError(
                f"{self.metadata.architecture} expects input (batch, {', '.join(map(str, expected))}), "
                f"got {tuple(x.shape)}"
            )

    def activations(self, x: torch.Tensor, until: Optional[str] = None) -> Dict[str, torch.Tensor]:
        """
        Run the stages in order and keep every output.

        Args:
            x: Batch of inputs
            until: Stop after this tap (saves work for early taps)

        Raises:
            TapNotFoundError: `until` is not a stage of this model
        """
        if until is not None and until not in self.stages:
            raise TapNotFoundError(f"Tap '{until}' not in {self.metadata.architecture} ({self.tap_names})")
        self._check_input(x)
        outputs: Dict[str, torch.Tensor] = {}
        h = x
        for name, stage in self.stages.items():
            h = stage(h)
            outputs[name] = h
            if name == until:
                break
        return outputs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.activations(x)["probs"]


def _init_weights(model: nn.Module, nonlinearity: str) -> None:
    """Kaiming-uniform (fan-in) weights, zero biases."""
    for module in model.modules():
        if isinstance(module, (nn.Linear, nn.Conv2d)):
            nn.init.kaiming_uniform_(module.weight, mode="fan_in", nonlinearity=nonlinearity)
            nn.init.zeros_(module.bias)


def _seeded(seed: int, build: Callable[[], FeatureModel], nonlinearity: Optional[str]) -> FeatureModel:
    """
    Build under a private RNG stream seeded with `seed`.

    nonlinearity=None keeps PyTorch's default layer init (weights and biases
    uniform in ±1/√fan_in).
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = build()
        if nonlinearity is not None:
            _init_weights(model, nonlinearity)
    return model


def build_toy_mlp(seed: int = 0, hidden: int = 100, depth: int = 5) -> FeatureModel:
    """
    input(2) -> depth x [FC(hidden) + Tanh] -> FC(2) -> softmax.

    Taps: hidden1..hidden{depth}, logits, probs.

    Layers keep the default PyTorch init. With zero biases a Tanh net starts
    as an odd function of its input, the opposite of labels that are symmetric
    under q -> -q, such as the disc/annulus problem.
    """

    def build() -> FeatureModel:
        stages: List[Tuple[str, nn.Module]] = []
        width = 2
        for i in range(1, depth + 1):
            stages.append((f"hidden{i}", nn.Sequential(nn.Linear(width, hidden, dtype=DTYPE), nn.Tanh())))
            width = hidden
        stages.append(("logits", nn.Linear(width, 2, dtype=DTYPE)))
        stages.append(("probs", nn.Softmax(dim=1)))
        return FeatureModel(ModelMetadata("toy_mlp", (2,), 2), stages)

    return _seeded(seed, build, None)


def build_cnn6(seed: int = 0) -> FeatureModel:
    """
    28x28 grayscale input, no padding, stride 1:

        conv5x5(16) -> pool2 -> conv5x5(32) -> pool2 -> flatten(32*4*4 = 512)
        -> FC(512) -> FC(256) -> FC(120) -> FC(84) -> FC(10) -> softmax

    ReLU after every layer except the last. Spatial sizes 28 -> 24 -> 12 -> 8 -> 4.
    """

    def build() -> FeatureModel:
        stages: List[Tuple[str, nn.Module]] = [
            ("conv1", nn.Sequential(nn.Conv2d(1, 16, 5, dtype=DTYPE), nn.ReLU())),
            ("pool1", nn.MaxPool2d(2)),
            ("conv2", nn.Sequential(nn.Conv2d(16, 32, 5, dtype=DTYPE), nn.ReLU())),
            ("pool2", nn.MaxPool2d(2)),
            ("flatten", nn.Flatten()),
            ("fc1", nn.Sequential(nn.Linear(512, 512, dtype=DTYPE), nn.ReLU())),
            ("fc2", nn.Sequential(nn.Linear(512, 256, dtype=DTYPE), nn.ReLU())),
            ("fc3", nn.Sequential(nn.Linear(256, 120, dtype=DTYPE), nn.ReLU())),
            ("fc4", nn.Sequential(nn.Linear(120, 84, dtype=DTYPE), nn.ReLU())),
            ("logits", nn.Linear(84, 10, dtype=DTYPE)),
            ("probs", nn.Softmax(dim=1)),
        ]
        return FeatureModel(ModelMetadata("cnn6", (1, 28, 28), 10), stages)

    return _seeded(seed, build, "relu")


ARCHITECTURES: Dict[str, Callable[..., FeatureModel]] = {
    "toy_mlp": build_toy_mlp,
    "cnn6": build_cnn6,
}


def build_model(architecture: str, seed: int = 0) -> FeatureModel:
    """Build a freshly initialized model from its registry id."""
    try:
        builder = ARCHITECTURES[architecture]
    except KeyError:
        raise ArchitectureMismatchError(
            f"Unknown architecture '{architecture}' (known: {sorted(ARCHITECTURES)})"
        ) from None
    return builder(seed=seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
