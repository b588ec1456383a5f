"""
Feature definition: f(x) = v · g(x).

g(x) is the (flattened) output of one tap point of a FeatureModel and v a
direction in that activation space. A one-hot v at the output layer gives
the usual "neuron" feature.
"""

from dataclasses import dataclass

import torch

from slingshot.core.autodiff import DTYPE, as_tensor, flatten_batch
from slingshot.core.errors import ShapeError
from slingshot.models.network import FeatureModel


@dataclass
class FeatureSpec:
    """
    Attributes:
        tap: Name of the activation the feature reads (the layer g)
        direction: Vector v, length equal to the tap width
    """
    tap: str
    direction: torch.Tensor

    def __post_init__(self):
        self.direction = as_tensor(self.direction).reshape(-1).detach()
        if self.direction.numel() == 0 or not bool(self.direction.ne(0).any()):
            raise ValueError("Feature direction must be a non-zero vector")

    @classmethod
    def one_hot(cls, tap: str, index: int, width: int) -> "FeatureSpec":
        if not 0 <= index < width:
            raise ValueError(f"Feature index {index} outside tap width {width}")
        direction = torch.zeros(width, dtype=DTYPE)
        direction[index] = 1.0
        return cls(tap=tap, direction=direction)

    @property
    def width(self) -> int:
        return self.direction.numel()

    def scaled(self, factor: float) -> "FeatureSpec":
        return FeatureSpec(tap=self.tap, direction=self.direction * factor)


def layer_activations(model: FeatureModel, tap: str, x: torch.Tensor) -> torch.Tensor:
    """g(x) for a batch, flattened to (batch, width)."""
    return flatten_batch(model.activations(x, until=tap)[tap])


def feature_values(model: FeatureModel, feat: FeatureSpec, x: torch.Tensor) -> torch.Tensor:
    """Per-sample feature values, shape (batch,). Differentiable in x and θ."""
    g = layer_activations(model, feat.tap, x)
    if g.shape[1] != feat.width:
        raise ShapeError(f"Direction has {feat.width} entries, tap '{feat.tap}' has width {g.shape[1]}")
    return g @ feat.direction


def feature_value(model: FeatureModel, feat: FeatureSpec, x: torch.Tensor) -> torch.Tensor:
    """
    Scalar feature value v·g(x) of a single input.

    Accepts an unbatched sample or a batch of one.
    """
    if x.dim() == len(model.metadata.input_shape):
        x = x.unsqueeze(0)
    if x.shape[0] != 1:
        raise ShapeError(f"feature_value takes one sample, got a batch of {x.shape[0]}")
    return feature_values(model, feat, x)[0]
