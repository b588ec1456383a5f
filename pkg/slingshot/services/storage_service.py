"""
Run Storage Service

Everything a run reads from or writes to disk goes through here:
checkpoints, images (PGM always, PNG for viewing), montages, CSV tables
and JSON reports, all under one output directory.

Checkpoint layout (all integers little-endian):

    offset  size  content
    0       4     magic "GSCK"
    4       4     u32 format version (1)
    8       4     u32 header length n
    12      n     UTF-8 JSON header: architecture, input_shape, num_classes,
                  arrays [{name, shape, offset, count}]
    12+n    ...   float64 payload, arrays back to back
    end-32  32    SHA-256 of every preceding byte

Images are quantized as floor(255·clamp(x, 0, 1) + 0.5), so 0.5 maps to 128.

Copyright 2025 Tejaswi Mahapatra
Licensed under the Apache License, Version 2.0
"""

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from slingshot.core.errors import (
    ArchitectureMismatchError,
    CheckpointVersionError,
    ChecksumError,
    DataFormatError,
)
from slingshot.models.network import FeatureModel, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GSCK"
CHECKPOINT_VERSION = 1
DIGEST_SIZE = 32
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""
    version: int
    architecture: str
    input_shape: List[int]
    num_classes: int
    arrays: Dict[str, np.ndarray]


def encode_checkpoint(model: FeatureModel) -> bytes:
    arrays, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        values = tensor.detach().cpu().numpy().astype("<f8")
        arrays.append({"name": name, "shape": list(values.shape), "offset": offset, "count": int(values.size)})
        chunks.append(values.tobytes())
        offset += values.size
    header = json.dumps(
        {
            "architecture": model.metadata.architecture,
            "input_shape": list(model.metadata.input_shape),
            "num_classes": model.metadata.num_classes,
            "arrays": arrays,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Raises:
        ChecksumError: digest does not match
        DataFormatError: bad magic or malformed header
        CheckpointVersionError: unsupported format version
    """
    if len(data) < _PREFIX.size + DIGEST_SIZE:
        raise DataFormatError("Checkpoint is truncated")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("Checkpoint checksum mismatch")
    magic, version, header_len = _PREFIX.unpack_from(body)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"Not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"Checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"Malformed checkpoint header: {exc}") from exc

    try:
        payload = np.frombuffer(body, dtype="<f8", offset=_PREFIX.size + header_len)
        arrays = {}
        for entry in header["arrays"]:
            start, count = int(entry["offset"]), int(entry["count"])
            if start < 0 or count < 0 or start + count > payload.size:
                raise DataFormatError(f"Array '{entry['name']}' runs past the payload")
            arrays[entry["name"]] = payload[start:start + count].reshape(entry["shape"])
        return Checkpoint(
            version=version,
            architecture=str(header["architecture"]),
            input_shape=list(header["input_shape"]),
            num_classes=int(header["num_classes"]),
            arrays=arrays,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"Malformed checkpoint header: {exc!r}") from exc


def model_from_checkpoint(checkpoint: Checkpoint, architecture: Optional[str] = None) -> FeatureModel:
    """
    Rebuild the model and load the stored parameters bit for bit.

    Raises:
        ArchitectureMismatchError: `architecture` differs from the stored one,
            or the stored arrays do not fit the architecture
    """
    if architecture is not None and architecture != checkpoint.architecture:
        raise ArchitectureMismatchError(
            f"Checkpoint holds a '{checkpoint.architecture}' model, expected '{architecture}'"
        )
    model = build_model(checkpoint.architecture)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    stored = {name: tuple(a.shape) for name, a in checkpoint.arrays.items()}
    if expected != stored:
        raise ArchitectureMismatchError(f"Checkpoint arrays do not match architecture '{checkpoint.architecture}'")
    model.load_state_dict({name: torch.from_numpy(a.astype(np.float64)) for name, a in checkpoint.arrays.items()})
    return model.eval()


def quantize(image: torch.Tensor) -> np.ndarray:
    """[0, 1] image -> uint8 array (H, W) or (H, W, C)."""
    values = torch.as_tensor(image).detach().cpu().numpy().astype(np.float64)
    if values.ndim == 3:
        values = values[0] if values.shape[0] == 1 else np.moveaxis(values, 0, -1)
    return np.floor(255.0 * np.clip(values, 0.0, 1.0) + 0.5).astype(np.uint8)


def montage(images: Sequence[torch.Tensor], cols: Optional[int] = None) -> torch.Tensor:
    """Tile (C, H, W) images row-major into one (C, rows·H, cols·W) grid; empty cells are 0."""
    if not images:
        raise ValueError("montage needs at least one image")
    cols = cols or math.ceil(math.sqrt(len(images)))
    rows = math.ceil(len(images) / cols)
    c, h, w = images[0].shape
    grid = torch.zeros((c, rows * h, cols * w), dtype=images[0].dtype)
    for i, image in enumerate(images):
        r, k = divmod(i, cols)
        grid[:, r * h:(r + 1) * h, k * w:(k + 1) * w] = image
    return grid


class StorageService:
    """
    Files of one run, rooted at an output directory.

    Example:
        >>> storage = StorageService(Path("runs/toy"))
        >>> storage.save_checkpoint(model, "original.ckpt")
        >>> storage.write_image(x, "fv/fv_000")   # fv/fv_000.pgm (+ .png)
    """

    def __init__(self, root: Path, write_png: bool = True):
        self.root = Path(root)
        self.write_png = write_png
        self.written: List[Path] = []

    def path(self, name: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _record(self, path: Path) -> Path:
        self.written.append(path)
        logger.debug(f"Wrote {path}")
        return path

    # Checkpoints

    def save_checkpoint(self, model: FeatureModel, name: str) -> Path:
        path = self.path(name)
        path.write_bytes(encode_checkpoint(model))
        logger.info(f"Saved checkpoint {path}")
        return self._record(path)

    @staticmethod
    def read_checkpoint(path: Path) -> Checkpoint:
        return decode_checkpoint(Path(path).read_bytes())

    @staticmethod
    def load_checkpoint(path: Path, architecture: Optional[str] = None) -> FeatureModel:
        model = model_from_checkpoint(StorageService.read_checkpoint(path), architecture)
        logger.info(f"Loaded {model.metadata.architecture} checkpoint {path}")
        return model

    # Images

    def write_image(self, image: torch.Tensor, stem: str) -> List[Path]:
        """Write `stem`.pgm (and `stem`.png when enabled)."""
        pixels = Image.fromarray(quantize(image))
        paths = []
        if pixels.mode == "L":
            pgm = self.path(f"{stem}.pgm")
            pixels.save(pgm, format="PPM")
            paths.append(self._record(pgm))
        if self.write_png or pixels.mode != "L":
            png = self.path(f"{stem}.png")
            pixels.save(png, format="PNG")
            paths.append(self._record(png))
        return paths

    @staticmethod
    def read_image(path: Path) -> torch.Tensor:
        """PGM/PNG as a (C, H, W) float64 tensor in [0, 1]."""
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img, dtype=np.float64) / 255.0
        except UnidentifiedImageError as exc:
            raise DataFormatError(f"{path}: malformed image file") from exc
        if pixels.ndim == 2:
            return torch.from_numpy(pixels).unsqueeze(0)
        return torch.from_numpy(np.moveaxis(pixels, -1, 0).copy())

    def write_montage(self, images: Sequence[torch.Tensor], stem: str, cols: Optional[int] = None) -> List[Path]:
        return self.write_image(montage(images, cols), stem)

    # Reports

    def write_csv(self, rows: Iterable[Dict[str, Any]], name: str, fieldnames: Optional[List[str]] = None) -> Path:
        rows = list(rows)
        fieldnames = fieldnames or (list(rows[0].keys()) if rows else [])
        path = self.path(name)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
        return self._record(path)

    def write_json(self, report: BaseModel, name: str) -> Path:
        path = self.path(name)
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        return self._record(path)

    @staticmethod
    def read_csv(path: Path) -> List[Dict[str, str]]:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
