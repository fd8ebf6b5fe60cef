"""
CSV reports.

Every row is stamped with the master seed and the config hash, so tables
from different runs can be concatenated and still told apart. Numbers are
written with format_metric (PSNR of identical images becomes "inf").
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from app.metrics.quality import finite_mean, format_metric

logger = logging.getLogger(__name__)

PROVENANCE_FIELDS = ["seed", "config_hash"]

PathLike = Union[str, Path]


@dataclass
class Provenance:
    seed: int
    config_hash: str


@dataclass
class MetricRow:
    """Before/after quality of one test image."""
    image_id: str
    psnr_before: float
    psnr_after: float
    ssim_before: float
    ssim_after: float
    porosity_reference: float
    porosity_before: float
    porosity_after: float


METRIC_FIELDS = list(MetricRow.__dataclass_fields__)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format_metric(float(value))
    return str(value)


def write_csv(path: PathLike, fields: Sequence[str], rows: Iterable[Dict],
              provenance: Provenance) -> Path:
    """Write rows (dicts keyed by `fields`) with provenance columns in front."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PROVENANCE_FIELDS + list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = {"seed": provenance.seed, "config_hash": provenance.config_hash}
            out.update({k: _cell(row.get(k)) for k in fields})
            writer.writerow(out)
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def metric_rows_as_dicts(rows: Sequence[MetricRow]) -> List[Dict]:
    return [asdict(r) for r in rows]


def summarize(rows: Sequence[MetricRow], arm: str) -> Dict:
    """Aggregate means of a block of metric rows."""
    return {
        "arm": arm,
        "images": len(rows),
        "mean_psnr_before": finite_mean((r.psnr_before for r in rows), f"{arm} PSNR before"),
        "mean_psnr_after": finite_mean((r.psnr_after for r in rows), f"{arm} PSNR after"),
        "mean_ssim_before": float(np.mean([r.ssim_before for r in rows])) if rows else None,
        "mean_ssim_after": float(np.mean([r.ssim_after for r in rows])) if rows else None,
    }


SUMMARY_FIELDS = ["arm", "images", "mean_psnr_before", "mean_psnr_after",
                  "mean_ssim_before", "mean_ssim_after"]

HISTOGRAM_FIELDS = ["arm", "metric", "series", "bin_lo", "bin_hi", "count"]


def histogram_rows(values: Sequence[float], bins: int, arm: str, metric: str, series: str,
                   value_range: Optional[tuple] = None) -> List[Dict]:
    """Binned counts of finite values; bin edges follow numpy.histogram."""
    vals = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return []
    counts, edges = np.histogram(vals, bins=bins, range=value_range)
    return [{
        "arm": arm,
        "metric": metric,
        "series": series,
        "bin_lo": float(edges[i]),
        "bin_hi": float(edges[i + 1]),
        "count": int(counts[i]),
    } for i in range(len(counts))]
