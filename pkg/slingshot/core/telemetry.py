"""
Run telemetry with prometheus-client.

There is no long-running service to scrape, so each CLI run keeps its own
registry and dumps it to `metrics.prom` in the output directory (node
exporter textfile format) when SLINGSHOT_ENABLE_PROMETHEUS is on.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import logging
from pathlib import Path
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

logger = logging.getLogger(__name__)


class RunTelemetry:
    """Counters and gauges for one toolkit run."""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.steps = Counter(
            "slingshot_optimizer_steps",
            "Optimizer steps taken",
            ["phase"],
            registry=self.registry,
        )
        self.loss = Gauge(
            "slingshot_last_loss",
            "Most recent loss value",
            ["term"],
            registry=self.registry,
        )
        self.metric = Gauge(
            "slingshot_eval_metric",
            "Most recent evaluation metric",
            ["name"],
            registry=self.registry,
        )

    def step(self, phase: str, **losses: float) -> None:
        self.steps.labels(phase=phase).inc()
        for term, value in losses.items():
            self.loss.labels(term=term).set(value)

    def record_metric(self, name: str, value: float) -> None:
        self.metric.labels(name=name).set(value)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "metrics.prom"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), self.registry)
        logger.debug(f"Wrote telemetry to {path}")
        return path


_telemetry: Optional[RunTelemetry] = None


def get_telemetry() -> RunTelemetry:
    """Get or create the process-wide telemetry instance."""
    global _telemetry
    if _telemetry is None:
        _telemetry = RunTelemetry()
    return _telemetry


def reset_telemetry() -> RunTelemetry:
    """Start a fresh registry (one per CLI invocation)."""
    global _telemetry
    _telemetry = RunTelemetry()
    return _telemetry
