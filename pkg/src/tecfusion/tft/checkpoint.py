"""Self-describing JSON checkpoints: config echo, named tensors, normalizer stats and seed."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..config import ExperimentConfig
from ..errors import CheckpointError
from ..timeseries import NormalizationStats
from .layers import ParameterSet
from .model import TemporalFusionTransformer

FORMAT = "tecfusion-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: ParameterSet
    stats: NormalizationStats
    seed: int
    static_names: Tuple[str, ...]
    encoder_names: Tuple[str, ...]
    decoder_names: Tuple[str, ...]
    history: List[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def model(self) -> TemporalFusionTransformer:
        return TemporalFusionTransformer(
            self.config.model, len(self.static_names), len(self.encoder_names), len(self.decoder_names)
        )

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "config": self.config.to_dict(),
            "seed": int(self.seed),
            "variables": {
                "static": list(self.static_names),
                "encoder": list(self.encoder_names),
                "decoder": list(self.decoder_names),
            },
            "normalization": self.stats.to_dict(),
            "parameters": {
                name: {
                    "shape": list(t.value.shape),
                    "data": np.asarray(t.value, dtype=np.float64).ravel().tolist(),
                }
                for name, t in self.params.items()
            },
            "history": self.history,
            "best_epoch": self.best_epoch,
        }


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint.to_dict(), fh)


def load_checkpoint(path, expected_config: Optional[ExperimentConfig] = None) -> Checkpoint:
    """Read a checkpoint and check its tensors against the structure its config implies.

    With ``expected_config`` the stored config echo must match it exactly.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from None
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if data.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {data.get('version')!r}")
    try:
        config = ExperimentConfig.from_dict(data["config"])
        variables = data["variables"]
        stats = NormalizationStats.from_dict(data["normalization"])
        raw = data["parameters"]
        seed = int(data["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from None
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CheckpointError(f"{path}: stored config does not match the requested config")

    checkpoint = Checkpoint(
        config=config,
        params=ParameterSet(),
        stats=stats,
        seed=seed,
        static_names=tuple(variables["static"]),
        encoder_names=tuple(variables["encoder"]),
        decoder_names=tuple(variables["decoder"]),
        history=list(data.get("history") or []),
        best_epoch=data.get("best_epoch"),
    )
    expected = checkpoint.model().parameter_shapes()
    if set(raw) != set(expected):
        missing = sorted(set(expected) - set(raw))
        unexpected = sorted(set(raw) - set(expected))
        raise CheckpointError(f"{path}: parameter names differ; missing {missing}, unexpected {unexpected}")
    arrays = {}
    for name, shape in expected.items():
        entry = raw[name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(entry['shape'])}, config implies {shape}")
        values = np.asarray(entry["data"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: {name} holds {values.size} values for shape {shape}")
        arrays[name] = values.reshape(shape)
    checkpoint.params = ParameterSet.from_arrays(arrays)
    return checkpoint
