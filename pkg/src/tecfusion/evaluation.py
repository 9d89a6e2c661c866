"""TECU-space metrics with binned breakdowns, the persistence baseline, and interpretability export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .dataset import (
    AP_BINS,
    F107_BINS,
    LATITUDE_BANDS,
    TEST,
    PreparedBundle,
    SampleSet,
    ap_bin,
    build_samples,
    f107_bin,
    latitude_band,
    prepare_bundle,
)
from .errors import EmptySplitError, InvalidArgumentError, MissingHistoryError
from .ingest import TARGET_GROUPS, TARGET_SOURCE
from .tft import Checkpoint

METRIC_NAMES = ("mae_mean", "mae_std", "rmse_mean", "rmse_std")
BREAKDOWNS = {"latitude": LATITUDE_BANDS, "ap": AP_BINS, "f107": F107_BINS}


def error_metrics(predicted, actual) -> Dict[str, float]:
    """MAE and RMSE per target over every sample and horizon step; inputs are [..., 2] in TECU."""
    err = np.asarray(predicted, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    err = err.reshape(-1, len(TARGET_GROUPS))
    if err.shape[0] == 0:
        return {name: float("nan") for name in METRIC_NAMES}
    mae = np.mean(np.abs(err), axis=0)
    rmse = np.sqrt(np.mean(err * err, axis=0))
    return {"mae_mean": mae[0], "mae_std": mae[1], "rmse_mean": rmse[0], "rmse_std": rmse[1]}


@dataclass
class MetricsReport:
    overall: Dict[str, float]
    count: int
    per_horizon: List[Dict[str, float]]
    breakdowns: Dict[str, Dict[str, dict]] = field(default_factory=dict)
    horizon_resolution: int = 3600

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "count": self.count,
            "per_horizon": self.per_horizon,
            "breakdowns": self.breakdowns,
            "horizon_resolution": self.horizon_resolution,
        }


def metrics_report(predicted, samples: SampleSet, horizon_resolution: int = 3600) -> MetricsReport:
    """Score TECU predictions [N, H, 2] against the raw targets of ``samples``.

    Counts in each breakdown are samples (each contributes all H steps).
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = samples.targets_raw
    if predicted.shape != actual.shape:
        raise InvalidArgumentError(f"predictions {predicted.shape} do not match targets {actual.shape}")
    if len(samples) == 0:
        raise EmptySplitError("no samples to evaluate")
    labels = {
        "latitude": [latitude_band(v) for v in samples.latitudes],
        "ap": [ap_bin(v) for v in samples.ap],
        "f107": [f107_bin(v) for v in samples.f107],
    }
    breakdowns = {}
    for taxonomy, bins in BREAKDOWNS.items():
        names = np.asarray(labels[taxonomy], dtype=object)
        cells = {}
        for name in bins:
            sel = names == name
            cells[name] = {"count": int(sel.sum()), **error_metrics(predicted[sel], actual[sel])}
        breakdowns[taxonomy] = cells
    per_horizon = [error_metrics(predicted[:, h], actual[:, h]) for h in range(predicted.shape[1])]
    return MetricsReport(error_metrics(predicted, actual), len(samples), per_horizon, breakdowns, horizon_resolution)


def predict_tecu(checkpoint: Checkpoint, samples: SampleSet) -> np.ndarray:
    """All quantiles inverted to TECU: [N, H, 2, Q]."""
    model = checkpoint.model()
    pred = model.predict(checkpoint.params, samples)
    out = np.empty_like(pred)
    for j, group in enumerate(TARGET_GROUPS):
        out[:, :, j, :] = checkpoint.stats.invert(group, pred[:, :, j, :])
    return out


def median_tecu(checkpoint: Checkpoint, samples: SampleSet) -> np.ndarray:
    return predict_tecu(checkpoint, samples)[..., checkpoint.config.model.median_index]


def evaluate(checkpoint: Checkpoint, bundle, role: str = TEST, samples: Optional[SampleSet] = None) -> MetricsReport:
    """Metrics of the median forecast in TECU on the ``role`` split."""
    if samples is None:
        config = checkpoint.config
        prepared = bundle if isinstance(bundle, PreparedBundle) else prepare_bundle(bundle, config)
        samples = build_samples(prepared, config, role, checkpoint.stats)
    return metrics_report(median_tecu(checkpoint, samples), samples, checkpoint.config.horizon_resolution)


def persistence_baseline(samples: SampleSet) -> np.ndarray:
    """Repeat the last observed target pair over every horizon step, in TECU: [N, H, 2]."""
    names = [f"{TARGET_SOURCE}.{g}" for g in TARGET_GROUPS]
    if any(n not in samples.encoder_names for n in names):
        raise MissingHistoryError("the encoder window carries no target history")
    H = samples.targets.shape[1]
    last = np.stack(
        [samples.stats.invert(g, samples.encoder[:, -1, samples.encoder_index(n)]) for g, n in zip(TARGET_GROUPS, names)],
        axis=-1,
    )
    return np.repeat(last[:, None, :], H, axis=1)


def source_of(variable: str) -> str:
    return variable.split(".", 1)[0] if "." in variable else "clock"


def explain(checkpoint: Checkpoint, samples: SampleSet, max_samples: int = 16, batch_size: int = 256) -> dict:
    """Attention matrices for the first ``max_samples`` samples and selection weights averaged over all.

    ``source_weights`` sums the mean encoder weights of each source's channels.
    """
    model = checkpoint.model()
    sums = {"static": 0.0, "encoder": 0.0, "decoder": 0.0}
    attention_sum = 0.0
    exported = []
    for start in range(0, len(samples), batch_size):
        part = samples.subset(slice(start, start + batch_size))
        _, record = model.forward(checkpoint.params, part)
        sums["static"] = sums["static"] + record.static_weights.sum(axis=0)
        sums["encoder"] = sums["encoder"] + record.encoder_weights.mean(axis=1).sum(axis=0)
        sums["decoder"] = sums["decoder"] + record.decoder_weights.mean(axis=1).sum(axis=0)
        attention_sum = attention_sum + record.attention.mean(axis=1).sum(axis=0)
        for i in range(len(part)):
            if len(exported) >= max_samples:
                break
            exported.append(
                {
                    "origin": int(part.origins[i]),
                    "location": int(part.locations[i]),
                    "attention": record.attention[i].tolist(),
                }
            )
    n = len(samples)
    names = {"static": samples.static_names, "encoder": samples.encoder_names, "decoder": samples.decoder_names}
    mean_weights = {
        kind: {name: float(w) for name, w in zip(names[kind], np.atleast_1d(sums[kind]) / n)} for kind in names
    }
    by_source: Dict[str, float] = {}
    for name, w in mean_weights["encoder"].items():
        by_source[source_of(name)] = by_source.get(source_of(name), 0.0) + w
    return {
        "variables": {kind: list(v) for kind, v in names.items()},
        "mean_weights": mean_weights,
        "source_weights": by_source,
        "mean_attention": (attention_sum / n).tolist(),
        "samples": exported,
        "count": n,
    }


def write_explanation(explanation: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(explanation, fh, indent=1)
