"""Checkpoint files.

A checkpoint is a single JSON document::

    {
      "format": "selfimpute-checkpoint",
      "version": 1,
      "model": {"d", "window", "head", "levels", "kernel", "hidden"},
      "params": [{"name": ..., "shape": [...], "values": [...]}, ...],
      "normalization": {"mean": [...], "std": [...]} | null,
      "thresholds": {"point": float, "sequence": float, ...},
      "train_config": {...} | null
    }

Floats are written with ``repr`` precision so a round trip is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NormalizationStats
from .imputer import ImputerModel

FORMAT = "selfimpute-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ImputerModel
    normalization: Optional[NormalizationStats] = None
    thresholds: dict = field(default_factory=dict)
    train_config: Optional[dict] = None


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    m = ckpt.model
    return {
        "format": FORMAT,
        "version": VERSION,
        "model": {"d": m.d, "window": m.window, "head": m.head, "levels": m.levels,
                  "kernel": m.kernel, "hidden": m.hidden},
        "params": [
            {"name": name, "shape": list(value.shape), "values": value.ravel().tolist()}
            for name, value in m.params.items()
        ],
        "normalization": ckpt.normalization.to_dict() if ckpt.normalization else None,
        "thresholds": {k: float(v) for k, v in ckpt.thresholds.items()},
        "train_config": ckpt.train_config,
    }


def checkpoint_from_dict(data: dict) -> Checkpoint:
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError("not a selfimpute checkpoint")
    if data.get("version") != VERSION:
        raise CheckpointError(
            f"checkpoint version {data.get('version')} is not supported (expected {VERSION})"
        )
    try:
        spec = data["model"]
        model = ImputerModel(spec["d"], spec["window"], spec["head"], spec["levels"],
                             spec["kernel"], spec["hidden"])
        expected = model.shapes()
        params = {}
        for entry in data["params"]:
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != math.prod(shape):
                raise CheckpointError(f"parameter {entry['name']!r} has {values.size} values for shape {shape}")
            params[entry["name"]] = values.reshape(shape)
        if {k: tuple(v.shape) for k, v in params.items()} != expected:
            raise CheckpointError("parameter names or shapes do not match the model description")
        model.params = {k: params[k] for k in expected}
        norm = data.get("normalization")
        return Checkpoint(
            model,
            NormalizationStats.from_dict(norm) if norm else None,
            dict(data.get("thresholds") or {}),
            data.get("train_config"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    text = json.dumps(checkpoint_to_dict(ckpt))
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt or truncated checkpoint {path}: {exc}") from exc
    return checkpoint_from_dict(data)
