"""Run artifact persistence: time series CSV, summary, manifest and error files.

Every artifact of a run lives in one directory::

    <out>/timeseries.csv
    <out>/summary.json
    <out>/summary.txt
    <out>/manifest.json
    <out>/error.json          (only when the run failed)
"""
from pathlib import Path
from typing import Any, Optional
import json
import logging

import pandas as pd

from app.core.errors import SimulationError
from app.models.record import FLOAT_FORMAT, TimeSeriesRecord
from app.schemas.run import RunManifest
from app.sim.metrics import MetricSummary, summary_table

logger = logging.getLogger(__name__)

TIMESERIES_FILE = "timeseries.csv"
SUMMARY_FILE = "summary.json"
SUMMARY_TABLE_FILE = "summary.txt"
MANIFEST_FILE = "manifest.json"
ERROR_FILE = "error.json"


def run_directory(root: Path, name: str) -> Path:
    """Create (if needed) and return ``root/name``."""
    path = Path(root) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(data: Any, path: Path) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def write_timeseries(record: TimeSeriesRecord, out: Path) -> Path:
    path = Path(out) / TIMESERIES_FILE
    record.to_csv(path)
    logger.info("wrote %s (%d rows)", path, len(record))
    return path


def write_summary(summary: MetricSummary, out: Path) -> Path:
    """Machine-readable summary plus the aligned text table next to it."""
    path = _write_json(summary.to_dict(), Path(out) / SUMMARY_FILE)
    (Path(out) / SUMMARY_TABLE_FILE).write_text(summary_table(summary) + "\n")
    logger.info("wrote %s", path)
    return path


def write_manifest(manifest: RunManifest, out: Path) -> Path:
    path = _write_json(manifest.model_dump(mode="json"), Path(out) / MANIFEST_FILE)
    logger.info("wrote %s (config %s)", path, manifest.config_hash[:12])
    return path


def write_error(error: SimulationError, out: Optional[Path]) -> Optional[Path]:
    """Error JSON for scripted callers; partial records from a divergence go to the CSV."""
    if out is None:
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    partial = getattr(error, "partial_record", None)
    if partial is not None and len(partial):
        write_timeseries(partial, out)
    return _write_json(error.to_dict(), out / ERROR_FILE)


def write_run(record: TimeSeriesRecord, summary: MetricSummary, manifest: RunManifest, out: Path) -> dict[str, Path]:
    """Write the complete artifact set of one successful run."""
    return {
        "timeseries": write_timeseries(record, out),
        "summary": write_summary(summary, out),
        "manifest": write_manifest(manifest, out),
    }


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    """Deterministic CSV for derived tables (sweeps, comparisons)."""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path
