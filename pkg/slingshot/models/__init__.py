"""
Domain models: networks, features, datasets, tunnel geometry and results.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from slingshot.models.dataset import Dataset, DatasetSplit, Provenance
from slingshot.models.feature import FeatureSpec, feature_value, feature_values, layer_activations
from slingshot.models.network import (
    ARCHITECTURES,
    FeatureModel,
    ModelMetadata,
    build_cnn6,
    build_model,
    build_toy_mlp,
    count_parameters,
)
from slingshot.models.results import (
    AttackResult,
    AttackStepRecord,
    DetectionReport,
    EvalReport,
    EpochRecord,
    MetricsReport,
    MetricSummary,
    RankedActivations,
    RunManifest,
    SweepReport,
    SweepRow,
    ToyReport,
    TrainingResult,
    Trajectory,
)
from slingshot.models.tunnel import TunnelSpec, tunnel_from_points

__all__ = [
    "ARCHITECTURES",
    "AttackResult",
    "AttackStepRecord",
    "Dataset",
    "DatasetSplit",
    "DetectionReport",
    "EvalReport",
    "EpochRecord",
    "FeatureModel",
    "FeatureSpec",
    "MetricSummary",
    "MetricsReport",
    "ModelMetadata",
    "Provenance",
    "RankedActivations",
    "RunManifest",
    "SweepReport",
    "SweepRow",
    "ToyReport",
    "TrainingResult",
    "Trajectory",
    "TunnelSpec",
    "build_cnn6",
    "build_model",
    "build_toy_mlp",
    "count_parameters",
    "feature_value",
    "feature_values",
    "layer_activations",
    "tunnel_from_points",
]
