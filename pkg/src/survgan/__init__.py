"""Synthetic censored survival data: generation pipeline and survival-aware evaluation."""

from .dataset import ColumnSchema, SurvivalDataset
from .km import kaplan_meier, km_divergence, optimism, short_sightedness
from .pipeline import PipelineConfig, fit, generate, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ColumnSchema",
    "PipelineConfig",
    "SurvivalDataset",
    "fit",
    "generate",
    "kaplan_meier",
    "km_divergence",
    "load_model",
    "optimism",
    "save_model",
    "short_sightedness",
]
