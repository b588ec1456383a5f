"""
Shared fixtures.

Slow tests (full toy reproduction, long training) only run with
SLINGSHOT_RUN_SLOW_TESTS=true.
"""

import gzip
import os
from pathlib import Path

import numpy as np
import pytest
import torch
from torch import nn

from slingshot.config import reload_settings
from slingshot.core.autodiff import DTYPE, configure_torch
from slingshot.core.telemetry import reset_telemetry
from slingshot.models.dataset import DatasetSplit
from slingshot.models.feature import FeatureSpec
from slingshot.models.network import FeatureModel, ModelMetadata
from slingshot.services.dataset_service import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_FILES

configure_torch()

# Captured before the autouse fixture clears it for every test
REAL_DATA_ROOT = os.environ.get("SLINGSHOT_DATA_ROOT")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction test")


def pytest_collection_modifyitems(config, items):
    if reload_settings().run_slow_tests:
        return
    skip = pytest.mark.skip(reason="set SLINGSHOT_RUN_SLOW_TESTS=true to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def fresh_telemetry(monkeypatch):
    monkeypatch.delenv("SLINGSHOT_DATA_ROOT", raising=False)
    monkeypatch.setenv("SLINGSHOT_PROGRESS_BARS", "false")
    monkeypatch.setenv("SLINGSHOT_FV_WORKERS", "1")
    reload_settings()
    reset_telemetry()
    yield
    reload_settings()


class PotentialStage(nn.Module):
    """q -> -(γ/2)·‖qᵗ - q‖² + C as a (batch, 1) activation."""

    def __init__(self, target: torch.Tensor, gamma: float, c: float = 0.0):
        super().__init__()
        self.register_buffer("target", torch.as_tensor(target, dtype=DTYPE))
        self.gamma = gamma
        self.c = c

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        return (-0.5 * self.gamma * (q - self.target).pow(2).flatten(1).sum(dim=1) + self.c).unsqueeze(1)


@pytest.fixture
def potential_model():
    """Factory for a model whose only feature is exactly the slingshot potential."""

    def build(target, gamma: float, c: float = 0.0):
        target = torch.as_tensor(target, dtype=DTYPE)
        model = FeatureModel(
            ModelMetadata("potential", tuple(target.shape), 1),
            [("potential", PotentialStage(target, gamma, c))],
        )
        return model.eval(), FeatureSpec.one_hot("potential", 0, 1)

    return build


class EncodeStage(nn.Module):
    """x -> η⁻¹(x) for a fixed parameterization."""

    def __init__(self, param):
        super().__init__()
        self.param = param

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.param.inverse(x)


@pytest.fixture
def encoded_potential_model():
    """Factory for a model with f(x) = φ(η⁻¹(x)), so f∘η is the slingshot potential on η's row space."""

    def build(param, target, gamma: float, c: float = 0.0):
        target = torch.as_tensor(target, dtype=DTYPE)
        model = FeatureModel(
            ModelMetadata("encoded-potential", tuple(param.image_shape), 1),
            [("encode", EncodeStage(param)), ("potential", PotentialStage(target, gamma, c))],
        )
        return model.eval(), FeatureSpec.one_hot("potential", 0, 1)

    return build


@pytest.fixture
def identity_classifier():
    """Model whose logits are its input, for hand-checkable metrics."""

    def build(width: int) -> FeatureModel:
        return FeatureModel(
            ModelMetadata("identity", (width,), width),
            [("logits", nn.Identity()), ("probs", nn.Softmax(dim=1))],
        )

    return build


def write_idx(path: Path, array: np.ndarray, magic: int, compress: bool = False) -> Path:
    data = magic.to_bytes(4, "big")
    data += b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    data += array.astype(np.uint8).tobytes()
    if compress:
        path = path.with_name(path.name + ".gz")
        data = gzip.compress(data)
    path.write_bytes(data)
    return path


@pytest.fixture
def mnist_dir(tmp_path):
    """A tiny MNIST-shaped dataset in IDX format: 20 train and 10 test images."""
    directory = tmp_path / "mnist"
    directory.mkdir()
    rng = np.random.default_rng(0)
    for split, n in ((DatasetSplit.TRAIN, 20), (DatasetSplit.TEST, 10)):
        images_name, labels_name = MNIST_FILES[split]
        write_idx(directory / images_name, rng.integers(0, 256, (n, 28, 28)), IDX_IMAGES_MAGIC)
        write_idx(directory / labels_name, np.arange(n) % 10, IDX_LABELS_MAGIC, compress=(split is DatasetSplit.TEST))
    return directory


@pytest.fixture
def real_mnist_root() -> Path:
    if not REAL_DATA_ROOT or not Path(REAL_DATA_ROOT).is_dir():
        pytest.skip("SLINGSHOT_DATA_ROOT does not point at the MNIST IDX files")
    return Path(REAL_DATA_ROOT)
