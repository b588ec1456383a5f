"""
Result types produced by training, feature visualization and the attack.

In-memory results (tensors) are dataclasses; anything written as a report
is a Pydantic model so it serializes with model_dump_json().

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import torch
from pydantic import BaseModel, Field


@dataclass
class Trajectory:
    """
    Attributes:
        steps: Step indices of the stored iterates (0 = initialization)
        points: Stored iterates q⁽ⁱ⁾ (detached copies)
        feature_values: f(η(q⁽ⁱ⁾)) for every step, including the initial point
        final_q: q* after the last update
        final_image: η(q*)
        stride: Storage stride used for `points`
    """
    steps: List[int]
    points: List[torch.Tensor]
    feature_values: List[float]
    final_q: torch.Tensor
    final_image: torch.Tensor
    stride: int

    def __len__(self) -> int:
        return len(self.points)

    def distances_to(self, reference: torch.Tensor) -> List[float]:
        return [float(torch.linalg.vector_norm(p - reference)) for p in self.points]

    def rows(self, reference: Optional[torch.Tensor] = None) -> List[dict]:
        """CSV rows: step, feature value, optional distance to `reference`."""
        distances = self.distances_to(reference) if reference is not None else None
        rows = []
        for i, step in enumerate(self.steps):
            row = {"step": step, "feature_value": self.feature_values[step]}
            if distances is not None:
                row["distance"] = distances[i]
            rows.append(row)
        return rows


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: Optional[float] = None


@dataclass
class TrainingResult:
    model: torch.nn.Module
    log: List[EpochRecord] = field(default_factory=list)


@dataclass
class AttackStepRecord:
    step: int
    epoch: int
    manipulation_loss: float
    preservation_loss: float
    total_loss: float


@dataclass
class AttackResult:
    model: torch.nn.Module
    log: List[AttackStepRecord] = field(default_factory=list)


class MetricSummary(BaseModel):
    """Mean and population standard deviation of one metric over runs."""
    mean: float
    std: float = Field(ge=0)
    values: List[float]


class MetricsReport(BaseModel):
    """
    FV-statistics and classifier metrics for one model.

    `metrics` maps a similarity metric name ("mse", "ssim") to its summary
    over `n_runs` seeded FV samples.
    """
    n_runs: int
    metrics: Dict[str, MetricSummary]
    accuracy: Optional[float] = None
    auroc: Dict[str, float] = {}
    seeds: List[int] = []
    config_hash: Optional[str] = None
    label: Optional[str] = None


class RankedActivations(BaseModel):
    """Top-k samples by feature value, ties broken by ascending sample id."""
    k: int
    ids: List[int]
    values: List[float]


class DetectionReport(BaseModel):
    k: int
    before: RankedActivations
    after: RankedActivations
    jaccard: float
    label_histogram_before: Dict[int, int]
    label_histogram_after: Dict[int, int]
    montage_k: int
    montage_labels_before: List[int]
    montage_labels_after: List[int]


class SweepRow(BaseModel):
    alpha: float
    accuracy: float
    auroc: float
    mse_mean: float
    mse_std: float
    ssim_mean: float
    ssim_std: float


class ToyReport(BaseModel):
    """Outcome of the 2-D toy pipeline."""
    test_accuracy_before: float
    test_accuracy_after: float
    converged_runs: int
    total_runs: int
    tolerance: float
    field_alignment: float
    cross_section_r2: float
    final_distances: List[float]


class RunManifest(BaseModel):
    command: str
    config_name: str
    config_hash: str
    config: Dict[str, Any]
    master_seed: int
    derived_seeds: Dict[str, int]
    versions: Dict[str, str]
    outputs: List[str] = []
    inputs: List[str] = []


class EvalReport(BaseModel):
    """One MetricsReport per evaluated model ("before" / "after")."""
    reports: List[MetricsReport]


class SweepReport(BaseModel):
    positive_class: int
    n_runs: int
    rows: List[SweepRow]
