"""Samples for the forecaster: monthly-rotation splits, windows, and evaluation bins."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, SplitConfig
from .errors import EmptySplitError, InsufficientSpanError, InvalidArgumentError
from .ingest import TARGET_GROUPS, TARGET_SOURCE, SourceBundle, target_channel
from .timeseries import (
    NormalizationStats,
    TimeSeriesFrame,
    apply_normalizer,
    day_of_year,
    encode_cyclical,
    fit_channel,
    impute,
    month_index,
    resample,
    seconds_in_day,
)

TRAIN, VAL, TEST = "train", "val", "test"
ROLES = (TRAIN, VAL, TEST)

DAY = 86400
YEAR_PERIOD_DAYS = 365.25
# standardization of latitude: std of a uniform distribution on [-90, 90]
LATITUDE_SCALE = 90.0 / np.sqrt(3.0)

STATIC_NAMES = ("latitude", "longitude_sin", "longitude_cos", "day_of_year_sin", "day_of_year_cos")
DECODER_NAMES = ("seconds_in_day_sin", "seconds_in_day_cos", "day_of_year_sin", "day_of_year_cos")
CLOCK_NAMES = ("seconds_in_day_sin", "seconds_in_day_cos")


class BinClampWarning(UserWarning):
    """An index value fell outside the printed bin range and was clamped."""


# splits ------------------------------------------------------------------------------

def rotation_months(year: int, anchor_year: int) -> Tuple[int, int]:
    """(validation month, test month), 1-based, for ``year``."""
    offset = year - anchor_year
    return offset % 12 + 1, (offset + 6) % 12 + 1


def role_of_month(year: int, month: int, split: SplitConfig) -> str:
    val, test = rotation_months(year, split.anchor_year)
    if month == val:
        return VAL
    if month == test:
        return TEST
    return TRAIN


def make_splits(coverage: Tuple[int, int], split: SplitConfig = SplitConfig()) -> Dict[Tuple[int, int], str]:
    """Role of every calendar month touched by ``coverage = (start, end)`` (end exclusive)."""
    start, end = int(coverage[0]), int(coverage[1])
    if end <= start:
        raise InsufficientSpanError("coverage end must be after its start")
    first, last = int(month_index(start)), int(month_index(end - 1))
    if last - first + 1 < 12:
        raise InsufficientSpanError(f"coverage spans {last - first + 1} months; at least 12 are needed")
    roles = {}
    for m in range(first, last + 1):
        year, month = divmod(m, 12)
        roles[(year, month + 1)] = role_of_month(year, month + 1, split)
    return roles


def roles_for(timestamps, split: SplitConfig) -> np.ndarray:
    m = month_index(timestamps)
    years, months = m // 12, m % 12 + 1
    offset = years - split.anchor_year
    val = offset % 12 + 1
    test = (offset + 6) % 12 + 1
    out = np.full(m.shape, TRAIN, dtype=object)
    out[months == val] = VAL
    out[months == test] = TEST
    return out


# evaluation bins -------------------------------------------------------------------------

LATITUDE_BANDS = ("<30°", "30–60°", ">60°")
AP_BINS = ("[0-39]", "(39-67]", "(67-111]", "(111-300]")
F107_BINS = ("[0-70]", "(70-150]", "[150-200)")


def latitude_band(lat: float) -> str:
    if not abs(lat) <= 90:
        raise InvalidArgumentError(f"latitude {lat} outside [-90, 90]")
    a = abs(lat)
    if a < 30:
        return LATITUDE_BANDS[0]
    if a <= 60:
        return LATITUDE_BANDS[1]
    return LATITUDE_BANDS[2]


def ap_bin(ap: float) -> str:
    if not ap >= 0:
        raise InvalidArgumentError(f"Ap must be non-negative, got {ap}")
    if ap <= 39:
        return AP_BINS[0]
    if ap <= 67:
        return AP_BINS[1]
    if ap <= 111:
        return AP_BINS[2]
    if ap > 300:
        warnings.warn(f"Ap {ap} above 300 counted in the top bin", BinClampWarning, stacklevel=2)
    return AP_BINS[3]


def f107_bin(f107: float) -> str:
    if not f107 >= 0:
        raise InvalidArgumentError(f"F10.7 must be non-negative, got {f107}")
    if f107 <= 70:
        return F107_BINS[0]
    if f107 <= 150:
        return F107_BINS[1]
    if f107 >= 200:
        warnings.warn(f"F10.7 {f107} at or above 200 counted in the top bin", BinClampWarning, stacklevel=2)
    return F107_BINS[2]


# samples --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    static_features: np.ndarray  # [S]
    encoder_inputs: np.ndarray  # [L, F_past]
    decoder_known: np.ndarray  # [H, F_known]
    targets: np.ndarray  # [H, 2] normalized
    origin: int
    latitude: float
    longitude: float
    ap: float
    f107: float
    location: int = 0


@dataclass
class SampleSet:
    """Samples of one role stored as stacked arrays; indexing yields :class:`Sample`."""

    static: np.ndarray
    encoder: np.ndarray
    decoder: np.ndarray
    targets: np.ndarray
    targets_raw: np.ndarray
    origins: np.ndarray
    locations: np.ndarray
    latitudes: np.ndarray
    longitudes: np.ndarray
    ap: np.ndarray
    f107: np.ndarray
    static_names: Tuple[str, ...]
    encoder_names: Tuple[str, ...]
    decoder_names: Tuple[str, ...]
    stats: NormalizationStats
    role: str = TRAIN
    candidates: int = 0
    skipped: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return int(self.origins.size)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            i = int(index)
            return Sample(
                self.static[i], self.encoder[i], self.decoder[i], self.targets[i], int(self.origins[i]),
                float(self.latitudes[i]), float(self.longitudes[i]), float(self.ap[i]), float(self.f107[i]),
                int(self.locations[i]),
            )
        return self.subset(index)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "SampleSet":
        idx = np.arange(len(self))[index]
        arrays = {
            name: getattr(self, name)[idx]
            for name in (
                "static", "encoder", "decoder", "targets", "targets_raw", "origins", "locations",
                "latitudes", "longitudes", "ap", "f107",
            )
        }
        return SampleSet(
            **arrays,
            static_names=self.static_names,
            encoder_names=self.encoder_names,
            decoder_names=self.decoder_names,
            stats=self.stats,
            role=self.role,
            candidates=len(idx),
            skipped=Counter(),
        )

    def encoder_index(self, name: str) -> int:
        try:
            return self.encoder_names.index(name)
        except ValueError:
            raise KeyError(name) from None


@dataclass
class PreparedBundle:
    """Source frames resampled to their configured grids and gap-filled."""

    frames: Dict[str, TimeSeriesFrame]
    target: TimeSeriesFrame
    ap: Optional[TimeSeriesFrame]
    f107: Optional[TimeSeriesFrame]
    locations: List[Tuple[float, float]]
    coverage: Tuple[int, int]


def source_channels(bundle: SourceBundle, spec) -> List[str]:
    frame = bundle[spec.source_id]
    if spec.channels is None:
        return frame.channel_names
    unknown = [c for c in spec.channels if c not in frame.channels]
    if unknown:
        raise InvalidArgumentError(f"{spec.source_id}: unknown channels {unknown}")
    return list(spec.channels)


def prepare_bundle(bundle: SourceBundle, config: ExperimentConfig) -> PreparedBundle:
    frames = {}
    for spec in config.enabled_sources:
        if spec.source_id == TARGET_SOURCE:
            continue
        if spec.source_id not in bundle.frames:
            raise InvalidArgumentError(f"bundle has no {spec.source_id} frame")
        frame = bundle[spec.source_id].select(source_channels(bundle, spec))
        frames[spec.source_id] = impute(resample(frame, spec.resolution), config.max_gap)
    target = impute(resample(bundle[TARGET_SOURCE], config.horizon_resolution), config.max_gap)
    history = config.source(TARGET_SOURCE)
    if history is not None and history.enabled and history.resolution != config.horizon_resolution:
        raise InvalidArgumentError("target history must use the horizon resolution")

    def daily(source_id, channel):
        if source_id not in bundle.frames or channel not in bundle[source_id].channels:
            return None
        return resample(bundle[source_id].select([channel]), DAY)

    return PreparedBundle(
        frames, target, daily("ap_index", "ap"), daily("solar_proxies", "f107"), list(bundle.locations),
        bundle.coverage,
    )


def fit_statistics(prepared: PreparedBundle, config: ExperimentConfig) -> NormalizationStats:
    """Per-channel statistics from training-month timestamps only."""
    stats = NormalizationStats()
    for source_id, frame in prepared.frames.items():
        train = roles_for(frame.timestamps, config.split) == TRAIN
        for name, values in frame.channels.items():
            key = f"{source_id}.{name}"
            stats[key] = fit_channel(values[train], config.normalization_kind(name), name=key)
    target = prepared.target
    train = roles_for(target.timestamps, config.split) == TRAIN
    for group in TARGET_GROUPS:
        pooled = np.concatenate(
            [target.channels[target_channel(group, k)][train] for k in range(len(prepared.locations))]
        )
        stats[group] = fit_channel(pooled, config.normalization_kind(group), name=group)
    return stats


def encoder_variable_names(prepared: PreparedBundle, config: ExperimentConfig) -> Tuple[str, ...]:
    names = []
    for spec in config.enabled_sources:
        if spec.source_id == TARGET_SOURCE:
            names.extend(f"{TARGET_SOURCE}.{g}" for g in TARGET_GROUPS)
        else:
            names.extend(f"{spec.source_id}.{c}" for c in prepared.frames[spec.source_id].channel_names)
    names.extend(CLOCK_NAMES)
    return tuple(names)


def window_end(origin, resolution: int, horizon_resolution: int):
    """Latest grid time ``t`` of a source whose bin ``[t, t + resolution)`` ends by the first target bin.

    For sources on the horizon grid this is the origin itself; coarser sources
    (daily indices) use their last completed bin so no window overlaps the
    forecast period.
    """
    origin = np.asarray(origin, dtype=np.int64)
    return ((origin + horizon_resolution - resolution) // resolution) * resolution


def _gather(frame: TimeSeriesFrame, ends: np.ndarray, steps: int):
    """Vectorized ``align_window`` for many window ends: ``[N, steps, C]`` plus a validity mask."""
    res = frame.native_resolution
    end_idx = (ends - frame.timestamps[0]) // res
    start_idx = end_idx - steps + 1
    ok = (start_idx >= 0) & (end_idx < len(frame))
    values = frame.values()
    safe = np.clip(end_idx, steps - 1, len(frame) - 1)
    rows = safe[:, None] + np.arange(-steps + 1, 1)[None, :]
    return values[rows], ok


def static_features(latitude: float, longitude: float, origins) -> np.ndarray:
    origins = np.asarray(origins, dtype=np.int64)
    lon_s, lon_c = encode_cyclical(longitude, 360.0)
    doy_s, doy_c = encode_cyclical(day_of_year(origins) - 1, YEAR_PERIOD_DAYS)
    n = origins.size
    return np.column_stack(
        [np.full(n, latitude / LATITUDE_SCALE), np.full(n, lon_s), np.full(n, lon_c), doy_s, doy_c]
    )


def clock_features(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.int64)
    s, c = encode_cyclical(seconds_in_day(times), float(DAY))
    return np.stack([s, c], axis=-1)


def known_future_features(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.int64)
    doy_s, doy_c = encode_cyclical(day_of_year(times) - 1, YEAR_PERIOD_DAYS)
    return np.concatenate([clock_features(times), np.stack([doy_s, doy_c], axis=-1)], axis=-1)


def _daily_lookup(frame: Optional[TimeSeriesFrame], origins: np.ndarray) -> np.ndarray:
    if frame is None:
        return np.full(origins.size, np.nan)
    idx = (origins // DAY * DAY - frame.timestamps[0]) // DAY
    ok = (idx >= 0) & (idx < len(frame))
    out = np.full(origins.size, np.nan)
    values = next(iter(frame.channels.values()))
    out[ok] = values[idx[ok]]
    return out


def candidate_origins(prepared: PreparedBundle, config: ExperimentConfig) -> np.ndarray:
    hr = config.horizon_resolution
    start, end = prepared.coverage
    first = -(-start // hr) * hr
    last = end - (config.horizon_steps + 1) * hr  # last target bin must fit in coverage
    step = hr * config.origin_stride
    if last < first:
        return np.empty(0, dtype=np.int64)
    return np.arange(first, last + 1, step, dtype=np.int64)


def build_samples(
    bundle,
    config: ExperimentConfig,
    role: str,
    stats: Optional[NormalizationStats] = None,
) -> SampleSet:
    """Assemble every valid sample whose origin month has ``role``.

    ``bundle`` may be a :class:`SourceBundle` or an already prepared bundle.
    When ``stats`` is omitted they are fitted on the training months, so pass
    the training set's ``stats`` when building validation and test samples.
    Samples are ordered by location, then origin.
    """
    if role not in ROLES:
        raise InvalidArgumentError(f"unknown role {role!r}")
    prepared = bundle if isinstance(bundle, PreparedBundle) else prepare_bundle(bundle, config)
    make_splits(prepared.coverage, config.split)
    if stats is None:
        stats = fit_statistics(prepared, config)
    L, H, hr = config.encoder_steps, config.horizon_steps, config.horizon_resolution
    origins_all = candidate_origins(prepared, config)
    origins = origins_all[roles_for(origins_all, config.split) == role]
    enc_names = encoder_variable_names(prepared, config)
    finest = min([s.resolution for s in config.enabled_sources] + [hr])

    # per-source windows are shared by all locations
    shared_blocks, shared_ok = [], np.ones(origins.size, dtype=bool)
    for spec in config.enabled_sources:
        if spec.source_id == TARGET_SOURCE:
            continue
        frame = prepared.frames[spec.source_id]
        windows, ok = _gather(frame, window_end(origins, spec.resolution, hr), L)
        for j, name in enumerate(frame.channel_names):
            windows[..., j] = apply_normalizer(windows[..., j], stats[f"{spec.source_id}.{name}"])
        shared_blocks.append(windows)
        shared_ok &= ok
    step_times = origins[:, None] - (L - 1 - np.arange(L))[None, :] * finest
    clock = clock_features(step_times)
    decoder_times = origins[:, None] + np.arange(1, H + 1)[None, :] * hr
    decoder = known_future_features(decoder_times)
    ap = _daily_lookup(prepared.ap, origins)
    f107 = _daily_lookup(prepared.f107, origins)

    target = prepared.target
    skipped = Counter()
    parts = []
    for k, (lat, lon) in enumerate(prepared.locations):
        mean_ch = target.channels[target_channel("vtec_mean", k)]
        std_ch = target.channels[target_channel("vtec_std", k)]
        pair = np.column_stack([mean_ch, std_ch])
        blocks = list(shared_blocks)
        ok_hist = shared_ok.copy()
        if config.uses_target_history:
            hist, ok = _gather(target.replace(channels={"m": mean_ch, "s": std_ch}), origins, L)
            hist = np.stack(
                [apply_normalizer(hist[..., 0], stats["vtec_mean"]), apply_normalizer(hist[..., 1], stats["vtec_std"])],
                axis=-1,
            )
            blocks.append(hist)
            ok_hist &= ok
        blocks.append(clock)
        encoder = np.concatenate(blocks, axis=-1)

        t_idx = (decoder_times - target.timestamps[0]) // hr
        t_ok = np.all((t_idx >= 0) & (t_idx < len(target)), axis=1)
        raw = pair[np.clip(t_idx, 0, len(target) - 1)]
        normalized = np.stack(
            [apply_normalizer(raw[..., 0], stats["vtec_mean"]), apply_normalizer(raw[..., 1], stats["vtec_std"])],
            axis=-1,
        )
        with np.errstate(invalid="ignore"):
            enc_finite = np.all(np.isfinite(encoder), axis=(1, 2))
            tgt_finite = np.all(np.isfinite(normalized), axis=(1, 2))
        meta_ok = np.isfinite(ap) & np.isfinite(f107)

        reasons = np.full(origins.size, "", dtype=object)
        reasons[~meta_ok] = "missing_bin_metadata"
        reasons[~tgt_finite] = "missing_target"
        reasons[~t_ok] = "target_out_of_range"
        reasons[~enc_finite] = "missing_input"
        reasons[~ok_hist] = "insufficient_history"
        keep = reasons == ""
        skipped.update(r for r in reasons[~keep])
        n = int(keep.sum())
        parts.append(
            dict(
                static=static_features(lat, lon, origins[keep]),
                encoder=encoder[keep],
                decoder=decoder[keep],
                targets=normalized[keep],
                targets_raw=raw[keep],
                origins=origins[keep],
                locations=np.full(n, k, dtype=np.int64),
                latitudes=np.full(n, lat),
                longitudes=np.full(n, lon),
                ap=ap[keep],
                f107=f107[keep],
            )
        )

    arrays = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    candidates = origins.size * len(prepared.locations)
    if arrays["origins"].size == 0:
        raise EmptySplitError(
            f"no valid {role} samples out of {candidates} candidates; skip reasons {dict(skipped)}",
            skip_reasons=skipped,
        )
    return SampleSet(
        **arrays,
        static_names=STATIC_NAMES,
        encoder_names=enc_names,
        decoder_names=DECODER_NAMES,
        stats=stats,
        role=role,
        candidates=candidates,
        skipped=skipped,
    )


def build_inference_sample(
    prepared: PreparedBundle,
    config: ExperimentConfig,
    stats: NormalizationStats,
    origin: int,
    location: int,
) -> Sample:
    """One sample for forecasting from ``origin``; future targets need not exist (NaN)."""
    hr = config.horizon_resolution
    if origin % hr:
        raise InvalidArgumentError(f"origin must be on the {hr} s grid")
    L, H = config.encoder_steps, config.horizon_steps
    origins = np.array([origin], dtype=np.int64)
    finest = min([s.resolution for s in config.enabled_sources] + [hr])
    blocks = []
    for spec in config.enabled_sources:
        if spec.source_id == TARGET_SOURCE:
            continue
        frame = prepared.frames[spec.source_id]
        windows, ok = _gather(frame, window_end(origins, spec.resolution, hr), L)
        if not ok[0]:
            raise InvalidArgumentError(f"{spec.source_id}: not enough history before origin {origin}")
        for j, name in enumerate(frame.channel_names):
            windows[..., j] = apply_normalizer(windows[..., j], stats[f"{spec.source_id}.{name}"])
        blocks.append(windows[0])
    if config.uses_target_history:
        t = prepared.target
        pair = t.replace(
            channels={
                "m": t.channels[target_channel("vtec_mean", location)],
                "s": t.channels[target_channel("vtec_std", location)],
            }
        )
        hist, ok = _gather(pair, origins, L)
        if not ok[0]:
            raise InvalidArgumentError(f"target history unavailable before origin {origin}")
        blocks.append(
            np.column_stack(
                [apply_normalizer(hist[0, :, 0], stats["vtec_mean"]), apply_normalizer(hist[0, :, 1], stats["vtec_std"])]
            )
        )
    steps = origin - (L - 1 - np.arange(L)) * finest
    blocks.append(clock_features(steps))
    encoder = np.concatenate(blocks, axis=-1)
    if not np.all(np.isfinite(encoder)):
        raise InvalidArgumentError(f"missing input values in the window before origin {origin}")
    lat, lon = prepared.locations[location]
    decoder_times = origin + np.arange(1, H + 1) * hr
    return Sample(
        static_features=static_features(lat, lon, origins)[0],
        encoder_inputs=encoder,
        decoder_known=known_future_features(decoder_times),
        targets=np.full((H, 2), np.nan),
        origin=int(origin),
        latitude=lat,
        longitude=lon,
        ap=float(_daily_lookup(prepared.ap, origins)[0]),
        f107=float(_daily_lookup(prepared.f107, origins)[0]),
        location=location,
    )
