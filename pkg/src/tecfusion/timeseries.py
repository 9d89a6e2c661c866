"""Resolution-aware time-series frames and the transforms applied before modelling.

Timestamps are integer seconds since the Unix epoch (UTC). Missing values are
represented by NaN throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateChannelError,
    EmptyInputError,
    InsufficientHistoryError,
    InvalidArgumentError,
)

STANDARDIZE = "standardize"
LOG_STANDARDIZE = "log-standardize"
# offset (TECU) inside the log transform; keeps night-time values near zero finite
DEFAULT_LOG_EPSILON = 0.1


@dataclass(frozen=True)
class TimeSeriesFrame:
    """Timestamped multi-channel series from a single source."""

    source_id: str
    timestamps: np.ndarray
    channels: Dict[str, np.ndarray]
    native_resolution: int
    units: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(
            self,
            "channels",
            {name: np.asarray(v, dtype=np.float64) for name, v in self.channels.items()},
        )
        object.__setattr__(self, "units", dict(self.units))
        if int(self.native_resolution) <= 0:
            raise InvalidArgumentError(f"native_resolution must be positive, got {self.native_resolution}")
        object.__setattr__(self, "native_resolution", int(self.native_resolution))
        if ts.ndim != 1:
            raise InvalidArgumentError("timestamps must be one-dimensional")
        gaps = np.diff(ts)
        if np.any(gaps <= 0):
            bad = int(np.argmax(gaps <= 0)) + 1
            raise InvalidArgumentError(f"{self.source_id}: timestamps not strictly increasing at index {bad}")
        if np.any(gaps % self.native_resolution):
            bad = int(np.argmax(gaps % self.native_resolution != 0)) + 1
            raise InvalidArgumentError(
                f"{self.source_id}: gap before index {bad} is not a multiple of {self.native_resolution} s"
            )
        for name, values in self.channels.items():
            if values.shape != ts.shape:
                raise InvalidArgumentError(
                    f"{self.source_id}: channel {name!r} has {values.shape[0] if values.ndim else 0} values "
                    f"for {ts.size} timestamps"
                )

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def channel_names(self) -> list:
        return list(self.channels)

    @property
    def is_regular(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) == self.native_resolution))

    def values(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Channels stacked into a ``[time, channel]`` matrix."""
        names = self.channel_names if names is None else list(names)
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.channels[n] for n in names])

    def replace(self, **changes) -> "TimeSeriesFrame":
        fields = dict(
            source_id=self.source_id,
            timestamps=self.timestamps,
            channels=self.channels,
            native_resolution=self.native_resolution,
            units=self.units,
            metadata=self.metadata,
        )
        fields.update(changes)
        return TimeSeriesFrame(**fields)

    def select(self, names: Sequence[str]) -> "TimeSeriesFrame":
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise InvalidArgumentError(f"{self.source_id}: unknown channels {missing}")
        return self.replace(
            channels={n: self.channels[n] for n in names},
            units={n: self.units.get(n, "") for n in names},
        )

    def equals(self, other: "TimeSeriesFrame") -> bool:
        """Value equality treating NaN == NaN."""
        if (
            self.source_id != other.source_id
            or self.native_resolution != other.native_resolution
            or list(self.channels) != list(other.channels)
            or self.units != other.units
            or not np.array_equal(self.timestamps, other.timestamps)
        ):
            return False
        return all(
            np.array_equal(self.channels[n], other.channels[n], equal_nan=True) for n in self.channels
        )


def resample(frame: TimeSeriesFrame, target_resolution: int) -> TimeSeriesFrame:
    """Put ``frame`` on a regular grid of ``target_resolution`` seconds.

    Coarser targets average all non-missing inputs in each half-open bin
    ``[t, t + target)``; empty bins become NaN. Finer targets forward-fill the
    most recent input, which is considered valid for ``native_resolution``
    seconds after its timestamp. Output timestamps are multiples of the target.
    """
    if isinstance(target_resolution, bool) or not isinstance(target_resolution, (int, np.integer)):
        if not (isinstance(target_resolution, float) and target_resolution.is_integer()):
            raise InvalidArgumentError(f"target resolution must be whole seconds, got {target_resolution!r}")
    target = int(target_resolution)
    if target <= 0:
        raise InvalidArgumentError(f"target resolution must be positive, got {target_resolution}")
    if len(frame) == 0:
        raise EmptyInputError(f"{frame.source_id}: cannot resample an empty frame")

    ts = frame.timestamps
    if target >= frame.native_resolution:
        first = (ts[0] // target) * target
        last = (ts[-1] // target) * target
        grid = np.arange(first, last + target, target, dtype=np.int64)
        bins = (ts - first) // target
        channels = {}
        for name, values in frame.channels.items():
            ok = ~np.isnan(values)
            total = np.bincount(bins[ok], weights=values[ok], minlength=grid.size)
            count = np.bincount(bins[ok], minlength=grid.size)
            with np.errstate(invalid="ignore", divide="ignore"):
                channels[name] = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    else:
        first = -(-ts[0] // target) * target
        end = ts[-1] + frame.native_resolution  # exclusive coverage of the last input
        grid = np.arange(first, end, target, dtype=np.int64)
        src = np.searchsorted(ts, grid, side="right") - 1
        valid = (src >= 0) & (grid < ts[np.maximum(src, 0)] + frame.native_resolution)
        channels = {}
        for name, values in frame.channels.items():
            out = np.full(grid.size, np.nan)
            out[valid] = values[src[valid]]
            channels[name] = out
    return frame.replace(timestamps=grid, channels=channels, native_resolution=target)


def align_window(frame: TimeSeriesFrame, origin: int, lag: int, resolution: int) -> np.ndarray:
    """History matrix ``[lag / resolution, channels]`` ending at ``origin`` inclusive.

    Row 0 is the oldest step, ``origin - lag + resolution``; the last row is the
    value at ``origin``. ``frame`` must already be on a regular ``resolution`` grid.
    """
    lag, resolution, origin = int(lag), int(resolution), int(origin)
    if resolution <= 0 or lag <= 0:
        raise InvalidArgumentError("lag and resolution must be positive")
    if lag % resolution:
        raise InvalidArgumentError(f"lag {lag} is not divisible by resolution {resolution}")
    if frame.native_resolution != resolution or not frame.is_regular:
        raise InvalidArgumentError(
            f"{frame.source_id}: frame must be resampled to a regular {resolution} s grid first"
        )
    if len(frame) == 0:
        raise EmptyInputError(f"{frame.source_id}: empty frame")
    steps = lag // resolution
    start_ts = origin - lag + resolution
    t0 = int(frame.timestamps[0])
    if (origin - t0) % resolution:
        raise InvalidArgumentError(f"origin {origin} is not on the {resolution} s grid of {frame.source_id}")
    if start_ts < t0:
        earliest = t0 + lag - resolution
        raise InsufficientHistoryError(
            f"{frame.source_id}: window starting at {start_ts} precedes frame start {t0}; "
            f"earliest usable origin is {earliest}",
            earliest_origin=earliest,
        )
    end_index = (origin - t0) // resolution
    if end_index >= len(frame):
        raise InsufficientHistoryError(
            f"{frame.source_id}: origin {origin} is after the last timestamp {int(frame.timestamps[-1])}"
        )
    return frame.values()[end_index - steps + 1 : end_index + 1]


def encode_cyclical(value, period: float):
    """``(sin, cos)`` of the phase ``2 pi value / period``; works on scalars and arrays."""
    if not period > 0:
        raise InvalidArgumentError(f"period must be positive, got {period}")
    phase = 2.0 * np.pi * np.asarray(value, dtype=np.float64) / period
    s, c = np.sin(phase), np.cos(phase)
    if np.ndim(s) == 0:
        return float(s), float(c)
    return s, c


@dataclass(frozen=True)
class ChannelStats:
    kind: str
    mean: float
    std: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in (STANDARDIZE, LOG_STANDARDIZE):
            raise InvalidArgumentError(f"unknown transform kind {self.kind!r}")
        if not self.std > 0:
            raise InvalidArgumentError("std must be positive")
        if self.kind == STANDARDIZE and self.epsilon != 0.0:
            raise InvalidArgumentError("epsilon is only used by log-standardize")
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "std": self.std, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChannelStats":
        return cls(data["kind"], float(data["mean"]), float(data["std"]), float(data.get("epsilon", 0.0)))


class NormalizationStats(dict):
    """Mapping of channel name to :class:`ChannelStats`."""

    def apply(self, channel: str, values):
        return apply_normalizer(values, self[channel])

    def invert(self, channel: str, values):
        return invert_normalizer(values, self[channel])

    def to_dict(self) -> dict:
        return {name: s.to_dict() for name, s in self.items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalizationStats":
        return cls({name: ChannelStats.from_dict(s) for name, s in data.items()})


def fit_channel(values, kind: str = STANDARDIZE, epsilon: Optional[float] = None, name: str = "?") -> ChannelStats:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size < 2:
        raise InvalidArgumentError(f"channel {name!r} needs at least two finite values")
    if kind == LOG_STANDARDIZE:
        eps = DEFAULT_LOG_EPSILON if epsilon is None else float(epsilon)
        if np.any(values + eps <= 0):
            raise InvalidArgumentError(f"channel {name!r} has values <= -epsilon; cannot take the log")
        values = np.log(values + eps)
    elif kind == STANDARDIZE:
        eps = 0.0
    else:
        raise InvalidArgumentError(f"unknown transform kind {kind!r}")
    std = float(np.std(values, ddof=1))
    if not std > 0:
        raise DegenerateChannelError(name)
    return ChannelStats(kind, float(np.mean(values)), std, eps)


def fit_normalizer(
    frame: TimeSeriesFrame,
    kinds: Optional[Mapping[str, str]] = None,
    epsilon: Optional[float] = None,
) -> NormalizationStats:
    """Fit per-channel statistics (sample std) over the finite values of ``frame``.

    Channels absent from ``kinds`` are standardized. Callers pass training-split
    data only.
    """
    kinds = dict(kinds or {})
    return NormalizationStats(
        {
            name: fit_channel(values, kinds.get(name, STANDARDIZE), epsilon, name)
            for name, values in frame.channels.items()
        }
    )


def apply_normalizer(values, stats: ChannelStats):
    x = np.asarray(values, dtype=np.float64)
    if stats.kind == LOG_STANDARDIZE:
        x = np.log(x + stats.epsilon)
    return (x - stats.mean) / stats.std


def invert_normalizer(values, stats: ChannelStats):
    z = np.asarray(values, dtype=np.float64) * stats.std + stats.mean
    if stats.kind == LOG_STANDARDIZE:
        return np.exp(z) - stats.epsilon
    return z


def impute(frame: TimeSeriesFrame, max_gap: int) -> TimeSeriesFrame:
    """Forward-fill runs of at most ``max_gap`` missing steps.

    Longer runs and leading missing values are left as NaN.
    """
    if max_gap < 0:
        raise InvalidArgumentError("max_gap must be non-negative")
    if not frame.is_regular:
        raise InvalidArgumentError(f"{frame.source_id}: impute needs a regular grid; resample first")
    channels = {}
    for name, values in frame.channels.items():
        out = values.copy()
        missing = np.isnan(out)
        if missing.any() and max_gap > 0:
            i, n = 0, out.size
            while i < n:
                if not missing[i]:
                    i += 1
                    continue
                j = i
                while j < n and missing[j]:
                    j += 1
                if i > 0 and j - i <= max_gap:
                    out[i:j] = out[i - 1]
                i = j
        channels[name] = out
    return frame.replace(channels=channels)


def month_index(timestamps) -> np.ndarray:
    """``year * 12 + (month - 1)`` for each epoch-second timestamp."""
    days = np.asarray(timestamps, dtype=np.int64) // 86400
    dt = days.astype("datetime64[D]")
    years = dt.astype("datetime64[Y]").astype(np.int64) + 1970
    months = dt.astype("datetime64[M]").astype(np.int64) % 12
    return years * 12 + months


def day_of_year(timestamps) -> np.ndarray:
    days = np.asarray(timestamps, dtype=np.int64) // 86400
    dt = days.astype("datetime64[D]")
    return (dt - dt.astype("datetime64[Y]")).astype(np.int64) + 1


def seconds_in_day(timestamps) -> np.ndarray:
    return np.asarray(timestamps, dtype=np.int64) % 86400


def floor_to(timestamp: int, resolution: int) -> int:
    return (int(timestamp) // int(resolution)) * int(resolution)
