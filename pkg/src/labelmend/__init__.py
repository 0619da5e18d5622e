"""Pseudo-label correction for segmentation: reweighted training, MC-dropout
confidence, label self-correction and retraining, in numpy."""

from .data import (ConfidenceMap, Dataset, LabelMask, RunConfig, Sample,
                   load_dataset, parse_config, read_pgm, write_pgm)
from .pipeline import PipelineReport, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfidenceMap", "Dataset", "LabelMask", "RunConfig", "Sample",
    "load_dataset", "parse_config", "read_pgm", "write_pgm",
    "PipelineReport", "run_pipeline",
]
