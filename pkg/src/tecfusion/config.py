"""Declarative experiment configuration and its YAML form.

Durations in config files may be plain seconds or strings such as ``"1620 min"``,
``"27 d"`` or ``"1 h"``.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import yaml

from .errors import InvalidArgumentError
from .ingest import SOURCE_IDS, TARGET_GROUPS, TARGET_SOURCE
from .timeseries import LOG_STANDARDIZE, STANDARDIZE

_UNITS = {"s": 1, "sec": 1, "min": 60, "m": 60, "h": 3600, "hr": 3600, "d": 86400, "day": 86400, "days": 86400}
_DURATION = re.compile(r"^\s*(\d+)\s*([a-z]*)\s*$")


def parse_duration(value) -> int:
    if isinstance(value, bool):
        raise InvalidArgumentError(f"not a duration: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    match = _DURATION.match(str(value).lower())
    if not match or match.group(2) not in _UNITS and match.group(2):
        raise InvalidArgumentError(f"not a duration: {value!r}")
    return int(match.group(1)) * _UNITS.get(match.group(2) or "s")


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 64
    attention_heads: int = 2
    lstm_layers: int = 2
    dropout_rate: float = 0.1
    quantiles: Tuple[float, ...] = (0.1, 0.5, 0.9)
    output_targets: int = 2
    encoder_steps: int = 0
    decoder_steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if self.hidden_size < 1 or self.attention_heads < 1 or self.lstm_layers < 1:
            raise InvalidArgumentError("hidden size, heads and LSTM layers must be positive")
        if self.hidden_size % self.attention_heads:
            raise InvalidArgumentError(
                f"hidden_size {self.hidden_size} is not divisible by {self.attention_heads} heads"
            )
        q = self.quantiles
        if not q or any(not 0.0 < x < 1.0 for x in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise InvalidArgumentError(f"quantiles must be strictly increasing in (0, 1), got {q}")
        if 0.5 not in q:
            raise InvalidArgumentError("quantiles must include the median 0.5")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError("dropout_rate must be in [0, 1)")

    @property
    def median_index(self) -> int:
        return self.quantiles.index(0.5)


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    clip_norm: float = 1.0
    seed: int = 0
    dtype: str = "float32"
    max_batches_per_epoch: Optional[int] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.patience < 1:
            raise InvalidArgumentError("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgumentError("batch_size and max_epochs must be positive")
        if self.optimizer != "adam":
            raise InvalidArgumentError(f"unsupported optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError("dtype must be float32 or float64")


@dataclass(frozen=True)
class SplitConfig:
    scheme: str = "monthly-rotation"
    anchor_year: int = 2010
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.scheme != "monthly-rotation":
            raise InvalidArgumentError(f"unknown split scheme {self.scheme!r}")
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    enabled: bool = True
    lag: int = 0
    resolution: int = 3600
    channels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.source_id not in SOURCE_IDS:
            raise InvalidArgumentError(f"unknown source {self.source_id!r}")
        object.__setattr__(self, "lag", parse_duration(self.lag))
        object.__setattr__(self, "resolution", parse_duration(self.resolution))
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(self.channels))
        if self.enabled:
            if self.resolution <= 0 or self.lag <= 0:
                raise InvalidArgumentError(f"{self.source_id}: lag and resolution must be positive")
            if self.lag % self.resolution:
                raise InvalidArgumentError(
                    f"{self.source_id}: lag {self.lag} s is not a multiple of resolution {self.resolution} s"
                )

    @property
    def steps(self) -> int:
        return self.lag // self.resolution


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    sources: Tuple[SourceSpec, ...]
    encoder_steps: int
    horizon_steps: int = 24
    horizon_resolution: int = 3600
    target_channels: Tuple[str, ...] = TARGET_GROUPS
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    seed: int = 0
    max_gap: int = 3
    origin_stride: int = 1
    normalization: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "horizon_resolution", parse_duration(self.horizon_resolution))
        object.__setattr__(self, "target_channels", tuple(self.target_channels))
        object.__setattr__(self, "normalization", dict(self.normalization))
        ids = [s.source_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("a source is listed twice")
        if self.encoder_steps < 1 or self.horizon_steps < 1:
            raise InvalidArgumentError("encoder_steps and horizon_steps must be positive")
        for spec in self.enabled_sources:
            if spec.steps != self.encoder_steps:
                raise InvalidArgumentError(
                    f"{spec.source_id}: lag/resolution = {spec.steps} but encoder_steps = {self.encoder_steps}"
                )
        if not self.enabled_sources:
            raise InvalidArgumentError("no enabled sources")
        if self.horizon_steps * self.horizon_resolution > 86400:
            raise InvalidArgumentError("forecast horizon exceeds 24 h")
        if set(self.target_channels) != set(TARGET_GROUPS):
            raise InvalidArgumentError(f"target channels must be {TARGET_GROUPS}")
        for kind in self.normalization.values():
            if kind not in (STANDARDIZE, LOG_STANDARDIZE):
                raise InvalidArgumentError(f"unknown normalization {kind!r}")
        if self.origin_stride < 1 or self.max_gap < 0:
            raise InvalidArgumentError("origin_stride must be >= 1 and max_gap >= 0")
        model = replace(self.model, encoder_steps=self.encoder_steps, decoder_steps=self.horizon_steps)
        object.__setattr__(self, "model", model)

    @property
    def enabled_sources(self) -> Tuple[SourceSpec, ...]:
        order = {sid: i for i, sid in enumerate(SOURCE_IDS)}
        return tuple(sorted((s for s in self.sources if s.enabled), key=lambda s: order[s.source_id]))

    def source(self, source_id: str) -> Optional[SourceSpec]:
        for s in self.sources:
            if s.source_id == source_id:
                return s
        return None

    @property
    def uses_target_history(self) -> bool:
        spec = self.source(TARGET_SOURCE)
        return spec is not None and spec.enabled

    def normalization_kind(self, channel: str) -> str:
        if channel in self.normalization:
            return self.normalization[channel]
        # targets are always log-transformed
        return LOG_STANDARDIZE if channel in TARGET_GROUPS else STANDARDIZE

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def without_source(self, source_id: str) -> "ExperimentConfig":
        sources = tuple(replace(s, enabled=False) if s.source_id == source_id else s for s in self.sources)
        return replace(self, sources=sources, name=f"{self.name}-no-{source_id}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["sources"] = {
            s.source_id: (
                {"lag": s.lag, "resolution": s.resolution, **({"channels": list(s.channels)} if s.channels else {})}
                if s.enabled
                else None
            )
            for s in self.sources
        }
        data["target_channels"] = list(self.target_channels)
        data["model"]["quantiles"] = list(self.model.quantiles)
        data["split"]["fractions"] = list(self.split.fractions)
        for key in ("encoder_steps", "decoder_steps"):
            data["model"].pop(key)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        raw_sources = data.pop("sources", {}) or {}
        sources = []
        for source_id, entry in raw_sources.items():
            if entry is None or entry is False or (isinstance(entry, dict) and entry.get("enabled") is False):
                sources.append(SourceSpec(source_id, enabled=False))
                continue
            entry = dict(entry)
            entry.pop("enabled", None)
            channels = entry.pop("channels", None)
            unknown = set(entry) - {"lag", "resolution"}
            if unknown:
                raise InvalidArgumentError(f"{source_id}: unknown keys {sorted(unknown)}")
            sources.append(SourceSpec(source_id, True, entry["lag"], entry["resolution"], channels))
        try:
            model = ModelConfig(**(data.pop("model", None) or {}))
            training = TrainingConfig(**(data.pop("training", None) or {}))
            split = SplitConfig(**(data.pop("split", None) or {}))
            return cls(sources=tuple(sources), model=model, training=training, split=split, **data)
        except TypeError as exc:
            raise InvalidArgumentError(f"bad experiment config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{path}: expected a mapping at the top level")
    data.setdefault("name", path.stem)
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
