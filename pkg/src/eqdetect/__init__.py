"""Equation discovery from tabular data with optional domain knowledge."""

from .dataset import Dataset, FeatureGroups, NoiseSpec, generate_benchmark, load_csv
from .expr import ExprTree, canonicalize, parse
from .metrics import LossSpec, loss
from .pipeline import KnowledgeConfig, PipelineConfig, RunReport, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FeatureGroups",
    "NoiseSpec",
    "generate_benchmark",
    "load_csv",
    "ExprTree",
    "canonicalize",
    "parse",
    "LossSpec",
    "loss",
    "KnowledgeConfig",
    "PipelineConfig",
    "RunReport",
    "run_pipeline",
]
