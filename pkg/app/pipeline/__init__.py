"""
Run files, experiment commands and CSV reports.
"""

from app.pipeline.config import ExperimentConfig, load_config, parse_config_text
from app.pipeline.reports import MetricRow, Provenance, write_csv

__all__ = [
    "ExperimentConfig",
    "MetricRow",
    "Provenance",
    "load_config",
    "parse_config_text",
    "write_csv",
]
