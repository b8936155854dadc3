"""Configuration, pipeline orchestration, reports and the command line."""

from .config import BUILTIN, ExperimentConfig, builtin_config, load_config
from .pipeline import RunManifest, file_hash, run_pipeline
from .report import report_render

__all__ = ["BUILTIN", "ExperimentConfig", "RunManifest", "builtin_config", "file_hash", "load_config",
           "report_render", "run_pipeline"]
