"""
Metrics Service

Quantitative evaluation of an attack:

- image similarity between FV outputs and the target (MSE, SSIM)
- functional integrity of the model and the feature (accuracy, AUROC)
- FV statistics over many seeded runs, and the α trade-off sweep
- natural-domain detection: top-k most activating samples before and after
  the attack, compared by Jaccard overlap
- geometry checks of the carved landscape (field alignment, quadratic
  cross-section, convergence from the slingshot zone)

Why rank-based AUROC?
- Midranks from scipy.stats.rankdata handle ties exactly
- The value is invariant under any strictly increasing transform of scores

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import rankdata

from slingshot.core.autodiff import DTYPE, generator, gradient
from slingshot.core.errors import ShapeError
from slingshot.core.telemetry import get_telemetry
from slingshot.interfaces.parameterization import Parameterization
from slingshot.models.dataset import Dataset
from slingshot.models.feature import FeatureSpec, feature_values
from slingshot.models.network import FeatureModel
from slingshot.models.results import (
    DetectionReport,
    MetricsReport,
    MetricSummary,
    RankedActivations,
    SweepRow,
    Trajectory,
)
from slingshot.models.tunnel import TunnelSpec
from slingshot.schemas import FVConfig, SlingshotConfig, derive_run_seeds
from slingshot.services.attack_service import finetune, sample_tunnel, target_field
from slingshot.services.fv_service import fv_optimize, sample_ball, visualize

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


# Image similarity


def _as_image_batch(x: torch.Tensor) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[None]
    if x.dim() == 4:
        return x
    raise ShapeError(f"Expected an image (H, W), (C, H, W) or (N, C, H, W), got {tuple(x.shape)}")


def mse(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean squared difference of two images."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")
    return float((torch.as_tensor(a, dtype=DTYPE) - torch.as_tensor(b, dtype=DTYPE)).pow(2).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Normalized 2-D Gaussian kernel, shape (size, size)."""
    coords = torch.arange(size, dtype=DTYPE) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    kernel = torch.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: torch.Tensor, b: torch.Tensor, value_range: float = 1.0) -> float:
    """
    Mean structural similarity of two images.

    Local statistics use an 11x11 Gaussian window (σ = 1.5) over valid
    positions only (no padding); K1 = 0.01, K2 = 0.03.

    Raises:
        ShapeError: shapes differ, or the image is smaller than the window
    """
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")
    x, y = _as_image_batch(a), _as_image_batch(b)
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {tuple(x.shape[-2:])} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    channels = x.shape[1]
    window = gaussian_window().expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)

    def local(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, window, groups=channels)

    mu_x, mu_y = local(x), local(y)
    sigma_x = local(x * x) - mu_x**2
    sigma_y = local(y * y) - mu_y**2
    sigma_xy = local(x * y) - mu_x * mu_y

    c1 = (SSIM_K1 * value_range) ** 2
    c2 = (SSIM_K2 * value_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (sigma_x + sigma_y + c2)
    )
    return float(ssim_map.mean())


# Classifier metrics


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve from midranks.

    Equals P(score_pos > score_neg) + ½·P(score_pos == score_neg).

    Raises:
        ValueError: labels contain a single class
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ShapeError(f"auroc: {scores.shape[0]} scores but {labels.shape[0]} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@torch.no_grad()
def score_dataset(model: FeatureModel, feat: FeatureSpec, dataset: Dataset, batch_size: int = 512) -> np.ndarray:
    """Feature value of every sample, in dataset order."""
    chunks = [feature_values(model, feat, x) for x, _ in dataset.loader(batch_size)]
    return torch.cat(chunks).numpy() if chunks else np.zeros(0)


def auroc_per_class(model: FeatureModel, feat: FeatureSpec, dataset: Dataset, batch_size: int = 512) -> Dict[int, float]:
    """AUROC of the feature's scores for every label c (positives: label == c)."""
    scores = score_dataset(model, feat, dataset, batch_size)
    labels = dataset.labels.numpy()
    return {
        int(c): auroc(scores, labels == c)
        for c in np.unique(labels)
        if 0 < int((labels == c).sum()) < labels.size
    }


@torch.no_grad()
def accuracy(model: FeatureModel, dataset: Dataset, batch_size: int = 512) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    correct = 0
    for x, y in dataset.loader(batch_size):
        logits = model.activations(x, until="logits")["logits"]
        correct += int((logits.argmax(dim=1) == y).sum())
    return correct / len(dataset)


# Natural-domain activation maximization


def rank_scores(scores: Sequence[float], k: int) -> RankedActivations:
    """Top-k ids by descending score, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= k <= scores.size:
        raise ValueError(f"k={k} outside [0, {scores.size}]")
    ids = np.arange(scores.size)
    order = np.lexsort((ids, -scores))[:k]
    return RankedActivations(k=k, ids=order.tolist(), values=scores[order].tolist())


def top_k(model: FeatureModel, feat: FeatureSpec, dataset: Dataset, k: int, batch_size: int = 512) -> RankedActivations:
    return rank_scores(score_dataset(model, feat, dataset, batch_size), k)


def jaccard(a: Iterable[int], b: Iterable[int]) -> float:
    """|A ∩ B| / |A ∪ B|; two empty sets count as identical (1.0)."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def detect(
    original: FeatureModel,
    attacked: FeatureModel,
    feat: FeatureSpec,
    dataset: Dataset,
    k: int,
    montage_k: int = 9,
    batch_size: int = 512,
) -> DetectionReport:
    """
    Compare the top-k most activating samples before and after the attack.

    A low Jaccard overlap or a shifted label histogram hints that the
    feature's natural-domain behavior changed.
    """
    before = top_k(original, feat, dataset, k, batch_size)
    after = top_k(attacked, feat, dataset, k, batch_size)
    labels = dataset.labels.tolist()

    def histogram(ids: List[int]) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for i in ids:
            counts[labels[i]] = counts.get(labels[i], 0) + 1
        return dict(sorted(counts.items()))

    report = DetectionReport(
        k=k,
        before=before,
        after=after,
        jaccard=jaccard(before.ids, after.ids),
        label_histogram_before=histogram(before.ids),
        label_histogram_after=histogram(after.ids),
        montage_k=min(montage_k, k),
        montage_labels_before=[labels[i] for i in before.ids[:montage_k]],
        montage_labels_after=[labels[i] for i in after.ids[:montage_k]],
    )
    get_telemetry().record_metric("jaccard", report.jaccard)
    logger.info(f"Detection: top-{k} Jaccard={report.jaccard:.3f}")
    return report


# FV statistics


def summarize(values: Sequence[float]) -> MetricSummary:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(arr.mean()), std=float(arr.std()), values=arr.tolist())


def similarity_report(images: Sequence[torch.Tensor], target: torch.Tensor, seeds: Sequence[int]) -> MetricsReport:
    return MetricsReport(
        n_runs=len(images),
        metrics={
            "mse": summarize([mse(img, target) for img in images]),
            "ssim": summarize([ssim(img, target) for img in images]),
        },
        seeds=list(seeds),
    )


def fv_statistics(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    cfg: FVConfig,
    target: torch.Tensor,
    n_runs: int,
    trajectories: Optional[List[Trajectory]] = None,
) -> Tuple[MetricsReport, List[Trajectory]]:
    """
    n seeded FV runs compared against the target image.

    Per-run seeds are derived from cfg.seed, so the report is deterministic.
    Precomputed `trajectories` (same seeds) skip the optimization.

    Returns:
        (report, trajectories)
    """
    if n_runs < 1:
        raise ValueError("fv_statistics needs at least one run")
    seeds = derive_run_seeds(cfg.seed, n_runs)
    if trajectories is None:
        trajectories = visualize(model, feat, param, cfg, seeds)
    report = similarity_report([t.final_image for t in trajectories], target, seeds)
    for name, summary in report.metrics.items():
        get_telemetry().record_metric(f"{name}_mean", summary.mean)
    logger.info(
        f"FV statistics over {n_runs} runs: "
        + ", ".join(f"{name}={s.mean:.4f}±{s.std:.4f}" for name, s in report.metrics.items())
    )
    return report, trajectories


def alpha_sweep(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    tunnel: TunnelSpec,
    attack_cfg: SlingshotConfig,
    fv_cfg: FVConfig,
    alphas: Sequence[float],
    preserve: Dataset,
    test: Dataset,
    target: torch.Tensor,
    positive_class: int,
    n_runs: int,
) -> List[SweepRow]:
    """
    One attacked model per α, scored on accuracy, the feature's AUROC for
    `positive_class`, and FV similarity to the target.
    """
    rows: List[SweepRow] = []
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha={alpha} outside [0, 1]")
        logger.info(f"Sweep: attacking with alpha={alpha}")
        attacked = finetune(model, feat, param, tunnel, attack_cfg.model_copy(update={"alpha": alpha}), preserve).model
        scores = score_dataset(attacked, feat, test)
        report, _ = fv_statistics(attacked, feat, param, fv_cfg, target, n_runs)
        rows.append(
            SweepRow(
                alpha=alpha,
                accuracy=accuracy(attacked, test),
                auroc=auroc(scores, test.labels.numpy() == positive_class),
                mse_mean=report.metrics["mse"].mean,
                mse_std=report.metrics["mse"].std,
                ssim_mean=report.metrics["ssim"].mean,
                ssim_std=report.metrics["ssim"].std,
            )
        )
        logger.info(f"Sweep row: {rows[-1].model_dump()}")
    return rows


# Landscape geometry


def field_alignment(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    tunnel: TunnelSpec,
    cfg: SlingshotConfig,
    n: int,
    gen: torch.Generator,
) -> float:
    """Mean cosine similarity of ∇_q(f∘η) and γ(qᵗ - q) over n fresh tunnel points."""
    q = param.project(sample_tunnel(tunnel, n, gen)).requires_grad_(True)
    values = feature_values(model, feat, param(q))
    grads = gradient(values.sum(), [q])[0].flatten(1)
    field = target_field(q.detach(), tunnel, cfg).flatten(1)
    cosine = F.cosine_similarity(grads, field, dim=1, eps=1e-12)
    value = float(cosine.mean())
    get_telemetry().record_metric("field_alignment", value)
    return value


@torch.no_grad()
def cross_section_fit(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    tunnel: TunnelSpec,
    n_points: int = 101,
) -> float:
    """
    R² of a quadratic fit to f∘η along the segment q̃ -> qᵗ.
    """
    t = np.linspace(0.0, 1.0, n_points)
    q = torch.stack([tunnel.point_at(float(s)) for s in t])
    values = feature_values(model, feat, param(q)).numpy()
    coeffs = np.polyfit(t, values, 2)
    residual = values - np.polyval(coeffs, t)
    ss_res = float((residual**2).sum())
    ss_tot = float(((values - values.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def convergence_rate(
    model: FeatureModel,
    feat: FeatureSpec,
    param: Parameterization,
    fv_cfg: FVConfig,
    tunnel: TunnelSpec,
    n_runs: int,
    tolerance: float,
    seed: int = 0,
) -> Tuple[float, List[float]]:
    """
    Fraction of FV runs, started uniformly in the slingshot zone, that end
    within `tolerance` of qᵗ.

    Returns:
        (rate, final distance of every run)
    """
    starts = sample_ball(tunnel.start, tunnel.sigma_b, n_runs, generator(seed))
    distances = []
    for i, q0 in enumerate(starts):
        run_cfg = fv_cfg.model_copy(update={"seed": seed + i})
        trajectory = fv_optimize(model, feat, param, run_cfg, q0=q0)
        distances.append(float(torch.linalg.vector_norm(trajectory.final_q - tunnel.target)))
    rate = sum(d <= tolerance for d in distances) / n_runs
    logger.info(f"Convergence: {rate:.2%} of {n_runs} runs within {tolerance} of the target")
    return rate, distances
