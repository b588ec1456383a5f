"""
Experiment Runner

Composes the services into the toolkit's commands. One runner handles one
command in one process; every command validates its inputs before any
work starts and finishes by writing a manifest (config hash, seeds,
versions, outputs) and, when enabled, the telemetry textfile.

Flow of a full attack experiment:
1. train   original model                  -> original.ckpt, train_log.csv
2. attack  fine-tune towards the target    -> attacked.ckpt, attack_log.csv
3. fv      seeded FV runs                  -> fv/fv_XXX.pgm/png, trajectory.csv
4. eval    FV statistics + classifier      -> report.json, report.csv
5. sweep   one attack per alpha            -> sweep.csv, sweep.json
6. detect  top-k natural AM before/after   -> detection.json, topk_*.png/pgm
`toy` runs steps 1, 2 and the landscape checks for the 2-D problem.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
import platform
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from slingshot.config import get_settings
from slingshot.core.autodiff import configure_torch, generator
from slingshot.core.errors import ConfigValidationError
from slingshot.core.telemetry import get_telemetry
from slingshot.interfaces.parameterization import Parameterization
from slingshot.models.dataset import Dataset
from slingshot.models.feature import FeatureSpec, layer_activations
from slingshot.models.network import FeatureModel, build_model
from slingshot.models.results import (
    DetectionReport,
    EvalReport,
    MetricsReport,
    RunManifest,
    SweepReport,
    ToyReport,
    Trajectory,
)
from slingshot.models.tunnel import TunnelSpec
from slingshot.plugins.parameterizations import get_parameterization
from slingshot.schemas import RunConfig, derive_run_seeds, derive_seeds
from slingshot.services import dataset_service, metrics_service
from slingshot.services.attack_service import finetune
from slingshot.services.fv_service import visualize
from slingshot.services.storage_service import StorageService
from slingshot.services.training_service import train

logger = logging.getLogger(__name__)

ORIGINAL_CKPT = "original.ckpt"
ATTACKED_CKPT = "attacked.ckpt"


class ExperimentRunner:
    """
    Runs toolkit commands for one (seeded) RunConfig.

    Args:
        cfg: Run configuration; section seeds are derived from cfg.seed
        out_dir: Output directory (created on demand)
    """

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg.seeded()
        self.seeds = derive_seeds(self.cfg.seed)
        self.storage = StorageService(out_dir, write_png=self.cfg.output.write_png)
        self.inputs: List[str] = []
        self._datasets: Optional[Tuple[Dataset, Dataset]] = None
        configure_torch(get_settings().num_threads or None, seed=self.seeds["model"])

    # Validation and shared pieces

    @property
    def is_toy(self) -> bool:
        return self.cfg.data.dataset == "toy2d"

    def validate(self, checkpoints: Tuple[Optional[Path], ...] = ()) -> None:
        """Fail before any work: missing dataset directory, target file or checkpoint."""
        if self.cfg.data.dataset == "mnist":
            dataset_service.resolve_data_dir(self.cfg.data.data_dir)
        if self.cfg.data.target == "image" and not Path(self.cfg.data.target_image).is_file():
            raise ConfigValidationError(f"Target image {self.cfg.data.target_image} not found")
        for path in checkpoints:
            if path is not None and not Path(path).is_file():
                raise ConfigValidationError(f"Checkpoint {path} not found")

    def datasets(self) -> Tuple[Dataset, Dataset]:
        if self._datasets is None:
            if self.is_toy:
                self._datasets = dataset_service.gen_toy2d(seed=self.seeds["data"])
            else:
                self._datasets = dataset_service.load_mnist(self.cfg.data.data_dir)
        return self._datasets

    def preservation_set(self) -> Dataset:
        data = self.cfg.data
        if data.preservation == "normal":
            return dataset_service.gen_preservation_normal(
                data.preservation_size or 15_000, data.preservation_std, seed=self.seeds["data"] + 1
            )
        return self.datasets()[0].head(data.preservation_size)

    def feature(self, model: FeatureModel) -> FeatureSpec:
        m = self.cfg.model
        if m.feature_direction is not None:
            return FeatureSpec(tap=m.feature_tap, direction=m.feature_direction)
        blank = torch.zeros((1, *model.metadata.input_shape), dtype=torch.float64)
        with torch.no_grad():
            width = layer_activations(model, m.feature_tap, blank).shape[1]
        return FeatureSpec.one_hot(m.feature_tap, m.feature_index, width)

    def parameterization(self, model: FeatureModel) -> Parameterization:
        return get_parameterization(
            self.cfg.fv.parameterization, model.metadata.input_shape, margin=self.cfg.fv.sigmoid_margin
        )

    def target_image(self, model: FeatureModel) -> Optional[torch.Tensor]:
        data = self.cfg.data
        if data.target == "point":
            return None
        if data.target == "image":
            _, height, width = model.metadata.input_shape
            return dataset_service.load_target_image(data.target_image, (height, width))
        return dataset_service.make_cross_target(model.metadata.input_shape[-1])

    def tunnel(self, model: FeatureModel, param: Parameterization) -> TunnelSpec:
        """q̃ from the config (or E[I]), qᵗ from the target point or η⁻¹(xᵗ)."""
        shape = param.domain_shape
        if self.cfg.data.target == "point":
            target = torch.as_tensor(self.cfg.data.target_point, dtype=torch.float64).reshape(shape)
        else:
            target = dataset_service.encode_target(self.target_image(model), param)
        start_values = self.cfg.tunnel.start if self.cfg.tunnel.start is not None else self.cfg.fv.init.mean
        start = torch.as_tensor(start_values, dtype=torch.float64)
        start = start.reshape(shape) if start.dim() else torch.full(shape, float(start), dtype=torch.float64)
        start, target = param.project(torch.stack([start, target]))
        return TunnelSpec(start=start, target=target, sigma_b=self.cfg.tunnel.sigma_b, sigma_l=self.cfg.tunnel.sigma_l)

    def load(self, path: Path) -> FeatureModel:
        self.inputs.append(str(path))
        return StorageService.load_checkpoint(path, self.cfg.model.architecture)

    def _default(self, path: Optional[Path], name: str) -> Path:
        return Path(path) if path is not None else self.storage.root / name

    # Commands

    def run_train(self) -> FeatureModel:
        self.validate()
        train_set, test_set = self.datasets()
        model = build_model(self.cfg.model.architecture, seed=self.seeds["model"])
        result = train(model, train_set, self.cfg.train, test=test_set)
        self.storage.save_checkpoint(result.model, ORIGINAL_CKPT)
        self.storage.write_csv(
            [vars(record) for record in result.log],
            "train_log.csv",
            fieldnames=["epoch", "loss", "train_accuracy", "test_accuracy"],
        )
        return result.model

    def run_attack(self, checkpoint: Optional[Path] = None) -> FeatureModel:
        checkpoint = self._default(checkpoint, ORIGINAL_CKPT)
        self.validate((checkpoint,))
        model = self.load(checkpoint)
        feat, param = self.feature(model), self.parameterization(model)
        tunnel = self.tunnel(model, param)
        result = finetune(model, feat, param, tunnel, self.cfg.slingshot, self.preservation_set())
        self.storage.save_checkpoint(result.model, ATTACKED_CKPT)
        self.storage.write_csv(
            [vars(record) for record in result.log],
            "attack_log.csv",
            fieldnames=["step", "epoch", "manipulation_loss", "preservation_loss", "total_loss"],
        )
        return result.model

    def _fv_runs(self, model: FeatureModel, n_runs: int) -> List[Trajectory]:
        feat, param = self.feature(model), self.parameterization(model)
        return visualize(model, feat, param, self.cfg.fv, derive_run_seeds(self.cfg.fv.seed, n_runs))

    def run_fv(self, checkpoint: Optional[Path] = None, n_runs: Optional[int] = None) -> List[Trajectory]:
        checkpoint = self._default(checkpoint, ATTACKED_CKPT)
        self.validate((checkpoint,))
        model = self.load(checkpoint)
        runs = self._fv_runs(model, n_runs or self.cfg.fv.n_runs)
        if len(model.metadata.input_shape) == 3:
            for i, run in enumerate(runs):
                self.storage.write_image(run.final_image, f"fv/fv_{i:03d}")
        if self.cfg.output.write_trajectory and runs:
            param = self.parameterization(model)
            reference = self.tunnel(model, param).target
            self.storage.write_csv(runs[0].rows(reference), "trajectory.csv")
        return runs

    def _evaluate(self, model: FeatureModel, label: str, n_runs: int) -> MetricsReport:
        _, test_set = self.datasets()
        feat, param = self.feature(model), self.parameterization(model)
        target = self.target_image(model)
        if target is not None:
            report, _ = metrics_service.fv_statistics(model, feat, param, self.cfg.fv, target, n_runs)
        else:
            # Point targets: distance of q* to qᵗ instead of image similarity
            runs = self._fv_runs(model, n_runs)
            target_q = self.tunnel(model, param).target
            distances = [float(torch.linalg.vector_norm(r.final_q - target_q)) for r in runs]
            report = MetricsReport(
                n_runs=n_runs,
                metrics={"distance": metrics_service.summarize(distances)},
                seeds=derive_run_seeds(self.cfg.fv.seed, n_runs),
            )
        batch = self.cfg.metrics.eval_batch_size
        auroc = metrics_service.auroc_per_class(model, feat, test_set, batch)
        return report.model_copy(
            update={
                "accuracy": metrics_service.accuracy(model, test_set, batch),
                "auroc": {str(c): v for c, v in auroc.items()},
                "config_hash": self.cfg.config_hash(),
                "label": label,
            }
        )

    def run_eval(
        self,
        checkpoint: Optional[Path] = None,
        original: Optional[Path] = None,
        n_runs: Optional[int] = None,
    ) -> EvalReport:
        checkpoint = self._default(checkpoint, ATTACKED_CKPT)
        self.validate((checkpoint, original))
        n_runs = n_runs or self.cfg.fv.n_runs
        reports = []
        if original is not None:
            reports.append(self._evaluate(self.load(original), "before", n_runs))
        reports.append(self._evaluate(self.load(checkpoint), "after", n_runs))

        self.storage.write_json(EvalReport(reports=reports), "report.json")
        rows = [
            {"label": r.label, "run": i, "seed": r.seeds[i], **{m: s.values[i] for m, s in r.metrics.items()}}
            for r in reports
            for i in range(r.n_runs)
        ]
        self.storage.write_csv(rows, "report.csv")
        for r in reports:
            get_telemetry().record_metric(f"accuracy_{r.label}", r.accuracy or 0.0)
        return EvalReport(reports=reports)

    def run_sweep(self, checkpoint: Optional[Path] = None, n_runs: Optional[int] = None) -> SweepReport:
        checkpoint = self._default(checkpoint, ORIGINAL_CKPT)
        self.validate((checkpoint,))
        model = self.load(checkpoint)
        target = self.target_image(model)
        if target is None:
            raise ConfigValidationError("sweep compares FV images with a target image; data.target must not be 'point'")
        _, test_set = self.datasets()
        feat, param = self.feature(model), self.parameterization(model)
        n_runs = n_runs or self.cfg.fv.n_runs
        rows = metrics_service.alpha_sweep(
            model, feat, param, self.tunnel(model, param), self.cfg.slingshot, self.cfg.fv,
            self.cfg.metrics.alphas, self.preservation_set(), test_set, target,
            positive_class=self.cfg.model.feature_index, n_runs=n_runs,
        )
        report = SweepReport(positive_class=self.cfg.model.feature_index, n_runs=n_runs, rows=rows)
        self.storage.write_csv([row.model_dump() for row in rows], "sweep.csv")
        self.storage.write_json(report, "sweep.json")
        return report

    def run_detect(self, original: Optional[Path] = None, attacked: Optional[Path] = None) -> DetectionReport:
        original = self._default(original, ORIGINAL_CKPT)
        attacked = self._default(attacked, ATTACKED_CKPT)
        self.validate((original, attacked))
        before_model, after_model = self.load(original), self.load(attacked)
        _, test_set = self.datasets()
        k = min(self.cfg.metrics.top_k, len(test_set))
        report = metrics_service.detect(
            before_model, after_model, self.feature(before_model), test_set, k,
            montage_k=self.cfg.metrics.montage_k, batch_size=self.cfg.metrics.eval_batch_size,
        )
        self.storage.write_json(report, "detection.json")
        if test_set.inputs.dim() == 4:
            for stem, ranked in (("topk_before", report.before), ("topk_after", report.after)):
                ids = ranked.ids[: report.montage_k]
                self.storage.write_montage([test_set.inputs[i] for i in ids], stem)
        return report

    def run_toy(self) -> ToyReport:
        """Generate -> train -> attack -> FV from the slingshot zone -> landscape checks."""
        original = self.run_train()
        _, test_set = self.datasets()
        attacked = self.run_attack(self.storage.root / ORIGINAL_CKPT)

        feat, param = self.feature(attacked), self.parameterization(attacked)
        tunnel = self.tunnel(attacked, param)
        metrics = self.cfg.metrics
        rate, distances = metrics_service.convergence_rate(
            attacked, feat, param, self.cfg.fv, tunnel,
            metrics.convergence_runs, metrics.convergence_tolerance, seed=self.cfg.fv.seed,
        )
        report = ToyReport(
            test_accuracy_before=metrics_service.accuracy(original, test_set),
            test_accuracy_after=metrics_service.accuracy(attacked, test_set),
            converged_runs=sum(d <= metrics.convergence_tolerance for d in distances),
            total_runs=len(distances),
            tolerance=metrics.convergence_tolerance,
            field_alignment=metrics_service.field_alignment(
                attacked, feat, param, tunnel, self.cfg.slingshot,
                metrics.alignment_samples, generator(self.seeds["attack"] + 1),
            ),
            cross_section_r2=metrics_service.cross_section_fit(
                attacked, feat, param, tunnel, metrics.cross_section_points
            ),
            final_distances=distances,
        )
        get_telemetry().record_metric("convergence_rate", rate)
        self.storage.write_json(report, "toy_report.json")
        logger.info(
            f"Toy: acc {report.test_accuracy_before:.3f} -> {report.test_accuracy_after:.3f}, "
            f"{report.converged_runs}/{report.total_runs} runs converged, "
            f"alignment={report.field_alignment:.3f}, R^2={report.cross_section_r2:.3f}"
        )
        return report

    # Bookkeeping

    def versions(self) -> Dict[str, str]:
        return {
            "slingshot": get_settings().app_version,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        }

    def finish(self, command: str) -> RunManifest:
        """Write manifest.json (and metrics.prom when enabled)."""
        outputs = [str(p.relative_to(self.storage.root)) for p in self.storage.written]
        seeds = dict(self.seeds)
        seeds.update({"train_section": self.cfg.train.seed, "fv_section": self.cfg.fv.seed,
                      "attack_section": self.cfg.slingshot.seed})
        manifest = RunManifest(
            command=command,
            config_name=self.cfg.name,
            config_hash=self.cfg.config_hash(),
            config=self.cfg.model_dump(mode="json"),
            master_seed=self.cfg.seed,
            derived_seeds=seeds,
            versions=self.versions(),
            outputs=outputs + ["manifest.json"],
            inputs=self.inputs,
        )
        if get_settings().enable_prometheus:
            get_telemetry().write(self.storage.root)
            manifest.outputs.append("metrics.prom")
        self.storage.write_json(manifest, "manifest.json")
        logger.info(f"{command} finished; outputs in {self.storage.root}")
        return manifest
