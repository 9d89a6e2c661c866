"""Run a directory of experiment configs and write consolidated comparison tables.

Outputs in ``out_dir``:

* ``table1.csv`` / ``table1.txt``: one row per config with each source's
  ``lag, res`` cell (``✗`` when disabled) and MAE then RMSE for mean and std.
* ``breakdowns.txt``: latitude, Ap and F10.7 breakdowns of every config.
* ``breakdowns/<config>.csv``: the machine-readable breakdown of one config.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .config import ExperimentConfig, load_config
from .dataset import PreparedBundle, TEST, build_samples, prepare_bundle
from .errors import TecFusionError
from .evaluation import BREAKDOWNS, METRIC_NAMES, MetricsReport, evaluate
from .training import train

log = logging.getLogger(__name__)

DISABLED = "✗"
FAILED = "failed"

# (source id, column heading, unit divisor in seconds)
TABLE_SOURCES = (
    ("omni_indices", "OMNI Indices lag, res (min)", 60),
    ("omni_solar_wind", "OMNI Solar Wind lag, res (min)", 60),
    ("omni_magnetic_field", "OMNI Magnetic Field lag, res (min)", 60),
    ("ap_index", "Ap Index lag, res (days)", 86400),
    ("solar_proxies", "Solar Proxies lag, res (days)", 86400),
    ("timed_see_l3", "TIMED SEE L3 lag, res (days)", 86400),
    ("jpl_gim", "JPL-GIM lag, res (min)", 60),
)
CSV_COLUMNS = ("config",) + tuple(s for s, _, _ in TABLE_SOURCES) + METRIC_NAMES + ("status",)
BREAKDOWN_COLUMNS = ("taxonomy", "bin", "count") + METRIC_NAMES
BREAKDOWN_TITLES = {
    "latitude": "Latitude band",
    "ap": "Geomagnetic activity (Ap)",
    "f107": "Solar activity (F10.7)",
}
BREAKDOWN_PREFIX = {"latitude": "", "ap": "Ap ", "f107": "F10.7 "}


@dataclass
class GridRow:
    name: str
    config: Optional[ExperimentConfig]
    report: Optional[MetricsReport] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass
class GridResult:
    rows: List[GridRow] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)


def _number(value) -> str:
    return f"{value:.4f}"


def source_cell(config: Optional[ExperimentConfig], source_id: str, unit: int) -> str:
    if config is None:
        return ""
    spec = config.source(source_id)
    if spec is None or not spec.enabled:
        return DISABLED

    def fmt(seconds):
        value = seconds / unit
        return str(int(value)) if float(value).is_integer() else f"{value:g}"

    return f"{fmt(spec.lag)}, {fmt(spec.resolution)}"


def table1_csv(rows: List[GridRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        cells = [row.name] + [source_cell(row.config, s, unit) for s, _, unit in TABLE_SOURCES]
        if row.ok:
            cells += [_number(row.report.overall[m]) for m in METRIC_NAMES] + ["ok"]
        else:
            cells += [FAILED] * len(METRIC_NAMES) + [f"failed: {row.error}"]
        writer.writerow(cells)
    return buf.getvalue()


def _pair(report: Optional[MetricsReport], first: str, second: str, cell: Optional[dict] = None) -> str:
    values = cell if cell is not None else (report.overall if report else None)
    if values is None:
        return FAILED
    if values.get("count", 1) == 0:
        return "n/a"
    return f"{values[first]:.2f}, {values[second]:.2f}"


def _render(headers: List[str], body: List[List[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(headers)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), rule] + [line(r) for r in body]) + "\n"


def table1_text(rows: List[GridRow]) -> str:
    headers = ["Config"] + [h for _, h, _ in TABLE_SOURCES] + ["MAE μ, σ (TECU)", "RMSE μ, σ (TECU)"]
    body = []
    for row in rows:
        cells = [row.name] + [source_cell(row.config, s, unit) for s, _, unit in TABLE_SOURCES]
        cells += [_pair(row.report, "mae_mean", "mae_std"), _pair(row.report, "rmse_mean", "rmse_std")]
        body.append(cells)
    return _render(headers, body)


def breakdown_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BREAKDOWN_COLUMNS)
    for taxonomy, bins in BREAKDOWNS.items():
        for name in bins:
            cell = report.breakdowns[taxonomy][name]
            metrics = [_number(cell[m]) if cell["count"] else "" for m in METRIC_NAMES]
            writer.writerow([taxonomy, name, cell["count"], *metrics])
    return buf.getvalue()


def breakdowns_text(rows: List[GridRow]) -> str:
    """One table per taxonomy; each cell lists ``bin: RMSE μ, σ`` lines, then MAE."""
    parts = []
    for taxonomy, bins in BREAKDOWNS.items():
        parts.append(f"{BREAKDOWN_TITLES[taxonomy]}\n")
        headers = ["Config"] + [h for _, h, _ in TABLE_SOURCES] + ["Bin", "RMSE μ, σ (TECU)", "MAE μ, σ (TECU)", "Count"]
        body = []
        for row in rows:
            sources = [source_cell(row.config, s, unit) for s, _, unit in TABLE_SOURCES]
            for i, name in enumerate(bins):
                cell = row.report.breakdowns[taxonomy][name] if row.ok else None
                lead = [row.name] + sources if i == 0 else [""] * (1 + len(sources))
                body.append(
                    lead
                    + [
                        BREAKDOWN_PREFIX[taxonomy] + name,
                        _pair(row.report, "rmse_mean", "rmse_std", cell) if row.ok else FAILED,
                        _pair(row.report, "mae_mean", "mae_std", cell) if row.ok else FAILED,
                        str(cell["count"]) if row.ok else "",
                    ]
                )
        parts.append(_render(headers, body))
        parts.append("\n")
    return "".join(parts)


def run_config(config: ExperimentConfig, bundle) -> MetricsReport:
    prepared = bundle if isinstance(bundle, PreparedBundle) else prepare_bundle(bundle, config)
    result = train(config, prepared)
    samples = build_samples(prepared, config, TEST, result.checkpoint.stats)
    return evaluate(result.checkpoint, prepared, samples=samples)


def run_experiment_grid(
    config_dir,
    bundle,
    out_dir,
    runner: Callable[[ExperimentConfig, object], MetricsReport] = run_config,
) -> GridResult:
    """Train and evaluate every ``*.yaml`` config in name order; a failing config becomes a failed row."""
    config_dir, out_dir = Path(config_dir), Path(out_dir)
    paths = sorted(list(config_dir.glob("*.yaml")) + list(config_dir.glob("*.yml")))
    result = GridResult()
    for path in paths:
        config = None
        try:
            config = load_config(path)
            log.info("grid: running %s", config.name)
            report = runner(config, bundle)
            result.rows.append(GridRow(config.name, config, report))
        except (TecFusionError, ValueError, KeyError) as exc:
            log.warning("grid: %s failed: %s", path.name, exc)
            name = config.name if config is not None else path.stem
            result.rows.append(GridRow(name, config, error=f"{type(exc).__name__}: {exc}"))
    result.files = write_grid_outputs(result.rows, out_dir)
    return result


def write_grid_outputs(rows: List[GridRow], out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    (out_dir / "breakdowns").mkdir(parents=True, exist_ok=True)
    outputs: Dict[Path, str] = {
        out_dir / "table1.csv": table1_csv(rows),
        out_dir / "table1.txt": table1_text(rows),
        out_dir / "breakdowns.txt": breakdowns_text(rows),
    }
    for row in rows:
        if row.ok:
            outputs[out_dir / "breakdowns" / f"{row.name}.csv"] = breakdown_csv(row.report)
    for path, text in outputs.items():
        path.write_text(text, encoding="utf-8")
    return list(outputs)
