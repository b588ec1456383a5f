"""
Typed errors raised across the toolkit.

The CLI maps these onto exit codes:
- validation problems (config, files, shapes) -> 1
- numerical failures (non-finite values, divergence) -> 2

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

from typing import Optional


class SlingshotError(Exception):
    """Base class for all toolkit errors."""


class ConfigValidationError(SlingshotError, ValueError):
    """Run configuration or CLI input is invalid."""


class ShapeError(SlingshotError, ValueError):
    """Tensor shapes violate an operation's shape rule."""


class GraphError(SlingshotError):
    """Gradient request that the recorded graph cannot answer."""


class DataFormatError(SlingshotError, ValueError):
    """A file on disk is malformed (bad magic, truncated, inconsistent counts)."""


class ChecksumError(SlingshotError):
    """Checkpoint payload does not match its stored digest."""


class CheckpointVersionError(SlingshotError):
    """Checkpoint was written with an unsupported format version."""


class ArchitectureMismatchError(SlingshotError):
    """Checkpoint parameters do not fit the requested architecture."""


class NumericalError(SlingshotError):
    """
    A value became non-finite.

    Carries whatever location context the raiser knows about so the
    message points at the offending node, step, epoch or batch.
    """

    def __init__(
        self,
        message: str,
        node: Optional[str] = None,
        step: Optional[int] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ):
        self.node = node
        self.step = step
        self.epoch = epoch
        self.batch = batch
        context = [
            f"{key}={value}"
            for key, value in (("node", node), ("step", step), ("epoch", epoch), ("batch", batch))
            if value is not None
        ]
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class TapNotFoundError(SlingshotError, KeyError):
    """Requested activation tap point does not exist in the model."""
