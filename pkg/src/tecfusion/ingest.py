"""Reading and writing source files, GIM point extraction, and synthetic bundles."""

from __future__ import annotations

import calendar
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import BundleIncompleteError, FormatError, InvalidArgumentError, SchemaError
from .timeseries import TimeSeriesFrame

logger = logging.getLogger(__name__)

SOURCE_IDS = (
    "omni_indices",
    "omni_solar_wind",
    "omni_magnetic_field",
    "ap_index",
    "solar_proxies",
    "timed_see_l3",
    "jpl_gim",
    "target_vtec",
)
TARGET_SOURCE = "target_vtec"
TARGET_GROUPS = ("vtec_mean", "vtec_std")
MANIFEST = "manifest.json"


def target_channel(group: str, location: int) -> str:
    return f"{group}_{location:02d}"


# canonical text format ----------------------------------------------------------------

@dataclass(frozen=True)
class SourceSchema:
    source_id: str
    channels: Tuple[str, ...]
    units: Tuple[str, ...]
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "units", tuple(self.units))
        if len(self.channels) != len(self.units):
            raise InvalidArgumentError("schema needs one unit per channel")

    @classmethod
    def of(cls, frame: TimeSeriesFrame) -> "SourceSchema":
        names = frame.channel_names
        return cls(frame.source_id, names, [frame.units.get(n, "") for n in names], frame.native_resolution)


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if len(text) != 20 or text[4] != "-" or text[7] != "-" or text[10] != "T" or text[-1] != "Z":
        raise ValueError(f"not an ISO-8601 UTC timestamp: {text!r}")
    return calendar.timegm(
        (int(text[0:4]), int(text[5:7]), int(text[8:10]), int(text[11:13]), int(text[14:16]), int(text[17:19]))
    )


def write_canonical(frame: TimeSeriesFrame, path) -> None:
    """Serialize ``frame``; floats use ``repr`` so parsing restores them bit for bit."""
    names = frame.channel_names
    columns = [frame.channels[n] for n in names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *names])
        writer.writerow(["#units", *[frame.units.get(n, "") for n in names]])
        for i, ts in enumerate(frame.timestamps):
            writer.writerow(
                [format_timestamp(ts), *["" if math.isnan(c[i]) else repr(float(c[i])) for c in columns]]
            )


def parse_canonical(path, schema: SourceSchema) -> TimeSeriesFrame:
    """Read one canonical file and validate it against ``schema``.

    Empty cells become NaN. Line numbers in errors are 1-based file lines.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise FormatError(f"{path.name}: empty file", line=1) from None
        if not header or header[0] != "timestamp":
            raise FormatError(f"{path.name}: first column must be 'timestamp'", line=1)
        found = tuple(header[1:])
        if found != schema.channels:
            missing = [c for c in schema.channels if c not in found]
            unexpected = [c for c in found if c not in schema.channels]
            raise SchemaError(
                f"{path.name}: header mismatch; missing {missing}, unexpected {unexpected}"
                + ("" if missing or unexpected else "; column order differs"),
                missing=missing,
                unexpected=unexpected,
            )
        try:
            units_row = next(rows)
        except StopIteration:
            raise FormatError(f"{path.name}: missing '#units' line", line=2) from None
        if not units_row or units_row[0] != "#units" or len(units_row) != len(header):
            raise FormatError(f"{path.name}: malformed '#units' line", line=2)
        if tuple(units_row[1:]) != schema.units:
            raise SchemaError(f"{path.name}: units {units_row[1:]} differ from schema {list(schema.units)}")

        timestamps: List[int] = []
        values: List[List[float]] = []
        width = len(header)
        for line_no, row in enumerate(rows, start=3):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{path.name}: expected {width} cells, found {len(row)}", line=line_no)
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise FormatError(f"{path.name}: {exc}", line=line_no) from None
            if timestamps and ts <= timestamps[-1]:
                raise FormatError(f"{path.name}: timestamp {row[0]} is not after the previous row", line=line_no)
            if timestamps and (ts - timestamps[-1]) % schema.resolution:
                raise FormatError(
                    f"{path.name}: gap is not a multiple of {schema.resolution} s", line=line_no
                )
            try:
                values.append([float(c) if c.strip() else math.nan for c in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path.name}: {exc}", line=line_no) from None
            timestamps.append(ts)

    matrix = np.array(values, dtype=np.float64).reshape(len(timestamps), len(schema.channels))
    return TimeSeriesFrame(
        source_id=schema.source_id,
        timestamps=np.array(timestamps, dtype=np.int64),
        channels={name: matrix[:, j].copy() for j, name in enumerate(schema.channels)},
        native_resolution=schema.resolution,
        units=dict(zip(schema.channels, schema.units)),
    )


# global ionospheric maps --------------------------------------------------------------------

@dataclass(frozen=True)
class GimGrid:
    timestamps: np.ndarray
    latitudes: np.ndarray
    longitudes: np.ndarray
    values: np.ndarray  # [time, lat, lon] TECU

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        lats = np.asarray(self.latitudes, dtype=np.float64)
        lons = np.asarray(self.longitudes, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        for name, arr in (("timestamps", ts), ("latitudes", lats), ("longitudes", lons)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "values", vals)
        if vals.shape != (ts.size, lats.size, lons.size):
            raise InvalidArgumentError(f"GIM values shape {vals.shape} does not match axes")
        if lats.size and (np.any(np.abs(lats) > 90) or not _monotone(lats)):
            raise InvalidArgumentError("GIM latitudes must be monotone within [-90, 90]")
        if lons.size and (np.any(lons < -180) or np.any(lons >= 180) or not _monotone(lons)):
            raise InvalidArgumentError("GIM longitudes must be monotone within [-180, 180)")
        if np.any(vals < 0):
            raise InvalidArgumentError("GIM values must be non-negative TECU")


def _monotone(axis: np.ndarray) -> bool:
    d = np.diff(axis)
    return bool(np.all(d > 0) or np.all(d < 0))


GOLDEN_ANGLE_DEG = math.degrees(math.pi * (3.0 - math.sqrt(5.0)))


def fibonacci_lattice(n: int) -> List[Tuple[float, float]]:
    """``n`` near-equal-area points ``(lat, lon)`` in degrees.

    Latitudes come from equal-area bands ``z = 1 - (2i + 1) / n``; longitudes
    advance by the golden angle and are wrapped into [-180, 180).
    """
    if n < 1:
        raise InvalidArgumentError("lattice needs at least one point")
    points = []
    for i in range(n):
        z = 1.0 - (2.0 * i + 1.0) / n
        lat = math.degrees(math.asin(z))
        lon = (i * GOLDEN_ANGLE_DEG + 180.0) % 360.0 - 180.0
        points.append((lat, lon))
    return points


def great_circle(lat1, lon1, lat2, lon2):
    """Central angle in radians (haversine form)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def select_gim_nodes(latitudes, longitudes, n: int = 10) -> List[Tuple[int, int]]:
    """Grid node indices nearest to each lattice point; ties and reuse resolved deterministically.

    Depends only on ``n`` and the axes. When two lattice points snap to the same
    node the later one takes its nearest unused node.
    """
    lats = np.asarray(latitudes, dtype=np.float64)
    lons = np.asarray(longitudes, dtype=np.float64)
    if n < 1:
        raise InvalidArgumentError("n must be at least 1")
    distinct = {(round(float(a), 9), round(float(b), 9)) for a in lats for b in lons}
    if n > len(distinct) or n > lats.size * lons.size:
        raise InvalidArgumentError(f"cannot place {n} points on a grid with {len(distinct)} distinct nodes")
    lat_grid, lon_grid = np.meshgrid(lats, lons, indexing="ij")
    used = set()
    chosen = []
    for lat, lon in fibonacci_lattice(n):
        dist = great_circle(lat, lon, lat_grid, lon_grid).ravel()
        for flat in np.argsort(dist, kind="stable"):
            node = divmod(int(flat), lons.size)
            if node not in used:
                used.add(node)
                chosen.append(node)
                break
    return chosen


def subsample_gim(grid: GimGrid, n: int = 10) -> TimeSeriesFrame:
    """Reduce a gridded map to ``n`` fixed point series ``gim_p0 .. gim_p{n-1}``."""
    if grid.timestamps.size == 0 or grid.latitudes.size == 0 or grid.longitudes.size == 0:
        raise InvalidArgumentError("GIM grid is empty")
    nodes = select_gim_nodes(grid.latitudes, grid.longitudes, n)
    resolution = int(np.min(np.diff(grid.timestamps))) if grid.timestamps.size > 1 else 3600
    channels = {f"gim_p{k}": grid.values[:, i, j].copy() for k, (i, j) in enumerate(nodes)}
    points = [[float(grid.latitudes[i]), float(grid.longitudes[j])] for i, j in nodes]
    return TimeSeriesFrame(
        source_id="jpl_gim",
        timestamps=grid.timestamps,
        channels=channels,
        native_resolution=resolution,
        units={name: "TECU" for name in channels},
        metadata={"gim_points": points},
    )


# bundles ----------------------------------------------------------------------------------

@dataclass
class SourceBundle:
    frames: Dict[str, TimeSeriesFrame]
    locations: List[Tuple[float, float]]
    warnings: List[str] = field(default_factory=list)
    truth: Optional["SyntheticTruth"] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if TARGET_SOURCE not in self.frames:
            raise BundleIncompleteError("bundle has no target_vtec frame")
        target = self.frames[TARGET_SOURCE]
        expected = [target_channel(g, k) for k in range(len(self.locations)) for g in TARGET_GROUPS]
        if sorted(target.channel_names) != sorted(expected):
            raise InvalidArgumentError(
                f"target_vtec channels {target.channel_names} do not match {len(self.locations)} locations"
            )
        self.locations = [(float(a), float(b)) for a, b in self.locations]

    @property
    def coverage(self) -> Tuple[int, int]:
        starts = [int(f.timestamps[0]) for f in self.frames.values() if len(f)]
        ends = [int(f.timestamps[-1]) + f.native_resolution for f in self.frames.values() if len(f)]
        return min(starts), max(ends)

    def __getitem__(self, source_id: str) -> TimeSeriesFrame:
        return self.frames[source_id]

    def equals(self, other: "SourceBundle") -> bool:
        return (
            self.locations == other.locations
            and list(self.frames) == list(other.frames)
            and all(self.frames[k].equals(other.frames[k]) for k in self.frames)
        )


def save_bundle(bundle: SourceBundle, directory) -> None:
    """One ``<source_id>.csv`` per source plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"locations": [list(p) for p in bundle.locations], "coverage": list(bundle.coverage), "sources": {}}
    for source_id, frame in bundle.frames.items():
        write_canonical(frame, directory / f"{source_id}.csv")
        manifest["sources"][source_id] = {
            "file": f"{source_id}.csv",
            "resolution": frame.native_resolution,
            "channels": frame.channel_names,
            "units": [frame.units.get(n, "") for n in frame.channel_names],
            "metadata": frame.metadata,
        }
    with open(directory / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_bundle(directory) -> SourceBundle:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise BundleIncompleteError(f"{directory}: no {MANIFEST}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    sources = manifest.get("sources", {})
    if TARGET_SOURCE not in sources or not (directory / sources[TARGET_SOURCE]["file"]).exists():
        raise BundleIncompleteError(f"{directory}: mandatory {TARGET_SOURCE} file is missing")

    warnings = []
    known = {entry["file"] for entry in sources.values()} | {MANIFEST}
    for path in sorted(directory.iterdir()):
        if path.name not in known:
            message = f"ignored unknown file {path.name}"
            logger.warning("%s: %s", directory, message)
            warnings.append(message)

    frames = {}
    for source_id, entry in sources.items():
        path = directory / entry["file"]
        if not path.exists():
            message = f"source {source_id} listed in manifest but {entry['file']} is missing"
            logger.warning("%s: %s", directory, message)
            warnings.append(message)
            continue
        schema = SourceSchema(source_id, entry["channels"], entry["units"], int(entry["resolution"]))
        frame = parse_canonical(path, schema)
        frames[source_id] = frame.replace(metadata=entry.get("metadata", {}))
    return SourceBundle(frames, [tuple(p) for p in manifest["locations"]], warnings)


# synthetic data -----------------------------------------------------------------------------

DEFAULT_LOCATIONS = ((5.0, -75.0), (40.0, 10.0), (55.0, 135.0), (68.0, -150.0))


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic generator; every field enters the closed forms below."""

    seed: int = 0
    start: str = "2014-01-01"
    days: int = 730
    locations: Tuple[Tuple[float, float], ...] = DEFAULT_LOCATIONS
    omni_resolution: int = 300
    daily_resolution: int = 86400
    gim_resolution: int = 3600
    target_resolution: int = 3600
    gim_points: int = 10
    gim_lat_step: float = 15.0
    gim_lon_step: float = 15.0
    # irradiance index = cycle + rotation + fast AR(1) part (unit-variance components)
    cycle_amplitude: float = 0.5
    rotation_amplitude: float = 0.5
    fast_amplitude: float = 0.8
    fast_persistence: float = 0.5
    irradiance_strength: float = 0.35
    irradiance_lag_days: int = 2
    storms_per_year: float = 15.0
    storm_depth: float = 0.35
    storm_delay_hours: float = 6.0
    storm_timescale_hours: float = 6.0
    target_noise: float = 0.02
    std_fraction: float = 0.15
    std_noise: float = 0.05
    driver_noise: float = 0.05
    max_lag_days: float = 27.0

    @property
    def start_ts(self) -> int:
        return parse_timestamp(f"{self.start}T00:00:00Z")


def zenith_cosine(timestamps, lat, lon) -> np.ndarray:
    """Cosine of the solar zenith angle from a simple declination/hour-angle model."""
    ts = np.asarray(timestamps, dtype=np.float64)
    doy = np.floor(ts / 86400.0) % 365.25
    declination = np.radians(-23.44) * np.cos(2.0 * np.pi * (doy + 10.0) / 365.25)
    local_hours = (ts % 86400.0) / 3600.0 + lon / 15.0
    hour_angle = np.radians(15.0 * (local_hours - 12.0))
    phi = np.radians(lat)
    return np.sin(phi) * np.sin(declination) + np.cos(phi) * np.cos(declination) * np.cos(hour_angle)


def diurnal_profile(zenith_cos):
    """g: baseline vTEC (TECU) rising smoothly and monotonically with the zenith cosine."""
    return 6.0 + 24.0 * 0.5 * (1.0 + np.tanh(2.5 * np.asarray(zenith_cos)))


def irradiance_response(irradiance_index, strength):
    """h: multiplicative irradiance factor, monotone in the index."""
    return np.exp(strength * np.asarray(irradiance_index))


def storm_pulse(hours_since_onset, timescale_hours):
    """Unit-peak pulse ``(tau/T) exp(1 - tau/T)`` for ``tau >= 0``, else 0."""
    tau = np.asarray(hours_since_onset, dtype=np.float64) / timescale_hours
    return np.where(tau > 0, np.clip(tau, 0, None) * np.exp(1.0 - np.clip(tau, 0, None)), 0.0)


@dataclass(frozen=True)
class SyntheticTruth:
    """Latent series behind a synthetic bundle, kept for tests and diagnostics."""

    day_starts: np.ndarray
    irradiance_index: np.ndarray  # per day
    storm_onsets: np.ndarray  # seconds
    storm_amplitudes: np.ndarray  # Ap units


def _storm_intensity(times, truth: SyntheticTruth, spec: SyntheticSpec, shift_hours: float = 0.0):
    """Sum of storm pulses normalized so an amplitude-200 storm peaks at 1."""
    out = np.zeros(np.shape(times))
    for onset, amp in zip(truth.storm_onsets, truth.storm_amplitudes):
        hours = (np.asarray(times, dtype=np.float64) - onset) / 3600.0 - shift_hours
        out += (amp / 200.0) * storm_pulse(hours, spec.storm_timescale_hours)
    return out


def time_factor(times, truth: SyntheticTruth, spec: SyntheticSpec):
    """Location-independent part: h(lagged irradiance) * (1 - storm depletion), depletion capped at 0.8."""
    times = np.asarray(times, dtype=np.int64)
    day = (times - truth.day_starts[0]) // 86400 - spec.irradiance_lag_days
    irr = truth.irradiance_index[np.clip(day, 0, truth.irradiance_index.size - 1)]
    storm = _storm_intensity(times, truth, spec, shift_hours=spec.storm_delay_hours)
    depletion = np.minimum(spec.storm_depth * storm, 0.8)
    return irradiance_response(irr, spec.irradiance_strength) * (1.0 - depletion)


def target_closed_form(times, lat, lon, truth: SyntheticTruth, spec: SyntheticSpec):
    """Noise-free vtec_mean = g(zenith cosine) * h(irradiance lagged) * (1 - depletion)."""
    return diurnal_profile(zenith_cosine(times, lat, lon)) * time_factor(times, truth, spec)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SourceBundle:
    """Build a bundle with planted driver-to-target structure.

    The irradiance index drives the target through ``h`` with a lag of
    ``irradiance_lag_days``; storms deplete the target ``storm_delay_hours``
    after they appear in the geomagnetic channels; ``omni_indices.noise_index``
    is pure noise. The latent series are attached as ``bundle.truth``.
    """
    span_days = spec.days
    if span_days * 86400 < 2 * spec.max_lag_days * 86400:
        raise InvalidArgumentError(
            f"synthetic span of {span_days} days is too short; need at least {2 * spec.max_lag_days:g} days"
        )
    for res in (spec.omni_resolution, spec.daily_resolution, spec.gim_resolution, spec.target_resolution):
        if res <= 0 or 86400 % res:
            raise InvalidArgumentError(f"resolution {res} must divide one day")
    rng = np.random.default_rng(spec.seed)
    t0 = spec.start_ts
    t_end = t0 + span_days * 86400
    day_starts = np.arange(t0, t_end, 86400, dtype=np.int64)
    day_number = np.arange(span_days, dtype=np.float64)

    # irradiance index, one value per day
    cycle = np.sin(2.0 * np.pi * day_number / (11.0 * 365.25) + rng.uniform(0, 2 * np.pi))
    rotation = np.sin(2.0 * np.pi * day_number / 27.0 + rng.uniform(0, 2 * np.pi))
    innovations = rng.normal(size=span_days) * math.sqrt(1.0 - spec.fast_persistence**2)
    fast = np.empty(span_days)
    fast[0] = rng.normal()
    for i in range(1, span_days):
        fast[i] = spec.fast_persistence * fast[i - 1] + innovations[i]
    slow = spec.cycle_amplitude * cycle + spec.rotation_amplitude * rotation
    irradiance = slow + spec.fast_amplitude * fast

    n_storms = rng.poisson(spec.storms_per_year * span_days / 365.25)
    onsets = np.sort(rng.uniform(t0, t_end, size=n_storms))
    amplitudes = rng.uniform(40.0, 250.0, size=n_storms)
    truth = SyntheticTruth(day_starts, irradiance, onsets, amplitudes)

    def noise(size, scale):
        return rng.normal(size=size) * scale

    frames: Dict[str, TimeSeriesFrame] = {}
    dn = spec.driver_noise

    omni_t = np.arange(t0, t_end, spec.omni_resolution, dtype=np.int64)
    storm_now = _storm_intensity(omni_t, truth, spec)
    storm_lead = _storm_intensity(omni_t, truth, spec, shift_hours=-1.0)  # solar wind arrives an hour early
    frames["omni_indices"] = TimeSeriesFrame(
        "omni_indices",
        omni_t,
        {
            "ae_index": 120.0 + 900.0 * storm_now + noise(omni_t.size, 400.0 * dn),
            "sym_h": -8.0 - 150.0 * storm_now + noise(omni_t.size, 80.0 * dn),
            "noise_index": rng.normal(size=omni_t.size),
        },
        spec.omni_resolution,
        {"ae_index": "nT", "sym_h": "nT", "noise_index": "1"},
    )
    frames["omni_solar_wind"] = TimeSeriesFrame(
        "omni_solar_wind",
        omni_t,
        {
            "flow_speed": 400.0 + 300.0 * storm_lead + noise(omni_t.size, 600.0 * dn),
            "proton_density": 5.0 + 10.0 * storm_lead + noise(omni_t.size, 20.0 * dn),
        },
        spec.omni_resolution,
        {"flow_speed": "km/s", "proton_density": "n/cc"},
    )
    frames["omni_magnetic_field"] = TimeSeriesFrame(
        "omni_magnetic_field",
        omni_t,
        {
            "bz_gsm": -12.0 * storm_lead + noise(omni_t.size, 40.0 * dn),
            "b_total": 5.0 + 15.0 * storm_lead + noise(omni_t.size, 20.0 * dn),
        },
        spec.omni_resolution,
        {"bz_gsm": "nT", "b_total": "nT"},
    )

    # daily Ap = quiet level + daily mean of storm activity
    hours = np.arange(t0, t_end, 3600, dtype=np.int64)
    hourly_ap = 200.0 * _storm_intensity(hours, truth, spec)
    daily_storm = hourly_ap.reshape(span_days, 24).mean(axis=1)
    daily_t = day_starts
    ap = np.clip(6.0 + daily_storm + np.abs(noise(span_days, 60.0 * dn)), 0.0, None)
    frames["ap_index"] = TimeSeriesFrame("ap_index", daily_t, {"ap": ap}, spec.daily_resolution, {"ap": "nT"})

    # proxies follow the slow part only; SEE bands carry the full index
    frames["solar_proxies"] = TimeSeriesFrame(
        "solar_proxies",
        daily_t,
        {
            "f107": 115.0 + 55.0 * slow + noise(span_days, 100.0 * dn),
            "m107": 110.0 + 50.0 * slow + noise(span_days, 100.0 * dn),
            "s107": 105.0 + 45.0 * slow + noise(span_days, 100.0 * dn),
            "y107": 108.0 + 48.0 * slow + noise(span_days, 100.0 * dn),
        },
        spec.daily_resolution,
        {"f107": "sfu", "m107": "sfu", "s107": "sfu", "y107": "sfu"},
    )
    frames["timed_see_l3"] = TimeSeriesFrame(
        "timed_see_l3",
        daily_t,
        {
            "euv_0_50nm": 1.0 * (1.0 + 0.2 * irradiance) + noise(span_days, 0.2 * dn),
            "euv_50_100nm": 0.6 * (1.0 + 0.15 * irradiance) + noise(span_days, 0.1 * dn),
            "lyman_alpha": 6.0 * (1.0 + 0.08 * irradiance) + noise(span_days, 0.5 * dn),
        },
        spec.daily_resolution,
        {"euv_0_50nm": "mW/m2", "euv_50_100nm": "mW/m2", "lyman_alpha": "mW/m2"},
    )

    # GIM: noise-free present-time map on a coarse grid, reduced to lattice points
    lats = np.arange(-90.0, 90.0 + 1e-9, spec.gim_lat_step)
    lons = np.arange(-180.0, 180.0 - 1e-9, spec.gim_lon_step)
    gim_t = np.arange(t0, t_end, spec.gim_resolution, dtype=np.int64)
    zen = zenith_cosine(gim_t[:, None, None], lats[None, :, None], lons[None, None, :])
    values = diurnal_profile(zen) * time_factor(gim_t, truth, spec)[:, None, None]
    frames["jpl_gim"] = subsample_gim(GimGrid(gim_t, lats, lons, values), spec.gim_points)

    target_t = np.arange(t0, t_end, spec.target_resolution, dtype=np.int64)
    target = {}
    units = {}
    for k, (lat, lon) in enumerate(spec.locations):
        clean = target_closed_form(target_t, lat, lon, truth, spec)
        mean_ = clean * (1.0 + noise(target_t.size, spec.target_noise))
        std_ = spec.std_fraction * clean * (1.0 + noise(target_t.size, spec.std_noise))
        target[target_channel("vtec_mean", k)] = np.clip(mean_, 0.0, None)
        target[target_channel("vtec_std", k)] = np.clip(std_, 0.0, None)
        units[target_channel("vtec_mean", k)] = "TECU"
        units[target_channel("vtec_std", k)] = "TECU"
    frames[TARGET_SOURCE] = TimeSeriesFrame(
        TARGET_SOURCE, target_t, target, spec.target_resolution, units,
        metadata={"locations": [list(p) for p in spec.locations]},
    )
    ordered = {sid: frames[sid] for sid in SOURCE_IDS}
    return SourceBundle(ordered, list(spec.locations), truth=truth)
