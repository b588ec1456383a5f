"""
Training Service

Supervised training of the original (pre-attack) models.

Cross-entropy on the "logits" tap, SGD with momentum (MNIST CNN) or AdamW,
batches shuffled from a generator seeded with the config seed. The same
seed reproduces the run bit for bit on the same platform.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import copy
import logging
from typing import Optional

import torch
import torch.nn.functional as F
from tqdm import tqdm

from slingshot.config import get_settings
from slingshot.core.autodiff import is_finite
from slingshot.core.errors import NumericalError
from slingshot.core.telemetry import get_telemetry
from slingshot.models.dataset import Dataset
from slingshot.models.network import FeatureModel
from slingshot.models.results import EpochRecord, TrainingResult
from slingshot.schemas import TrainConfig
from slingshot.services.metrics_service import accuracy

logger = logging.getLogger(__name__)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


class TrainingService:
    """
    Trains a copy of the given model; the input model is left untouched.

    Example:
        >>> service = TrainingService(TrainConfig(epochs=25, optimizer="adamw", lr=1e-3))
        >>> result = service.train(build_toy_mlp(seed=0), train_set, test=test_set)
        >>> result.log[-1].test_accuracy
        1.0
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.telemetry = get_telemetry()

    def train(self, model: FeatureModel, data: Dataset, test: Optional[Dataset] = None) -> TrainingResult:
        """
        Args:
            model: Freshly built (or pre-trained) model
            data: Training set; must be non-empty
            test: Optional held-out set scored after every epoch

        Returns:
            TrainingResult with the trained model and one EpochRecord per epoch

        Raises:
            ValueError: empty dataset
            NumericalError: non-finite loss (reports epoch and batch)
        """
        cfg = self.cfg
        if len(data) == 0:
            raise ValueError("Training set is empty")
        model = copy.deepcopy(model).train()
        optimizer = make_optimizer(model, cfg)
        loader = data.loader(cfg.batch_size, shuffle=True, seed=cfg.seed)
        result = TrainingResult(model=model)

        epochs = range(cfg.epochs)
        if get_settings().progress_bars:
            epochs = tqdm(epochs, desc="train", leave=False)

        for epoch in epochs:
            total_loss, correct, seen = 0.0, 0, 0
            for batch, (x, y) in enumerate(loader):
                logits = model.activations(x, until="logits")["logits"]
                loss = F.cross_entropy(logits, y)
                if not is_finite(loss):
                    raise NumericalError("Training loss is not finite", epoch=epoch, batch=batch)

                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()

                total_loss += loss.detach().item() * x.shape[0]
                correct += int((logits.detach().argmax(dim=1) == y).sum())
                seen += x.shape[0]
                self.telemetry.step("train", train=loss.detach().item())

            model.eval()
            record = EpochRecord(
                epoch=epoch,
                loss=total_loss / seen,
                train_accuracy=correct / seen,
                test_accuracy=accuracy(model, test) if test is not None else None,
            )
            model.train()
            result.log.append(record)
            logger.info(
                f"epoch {epoch + 1}/{cfg.epochs}: loss={record.loss:.5f} "
                f"train_acc={record.train_accuracy:.4f}"
                + (f" test_acc={record.test_accuracy:.4f}" if record.test_accuracy is not None else "")
            )

        model.eval()
        return result


def train(model: FeatureModel, data: Dataset, cfg: TrainConfig, test: Optional[Dataset] = None) -> TrainingResult:
    return TrainingService(cfg).train(model, data, test=test)
