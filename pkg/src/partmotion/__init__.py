"""Recurrent motion hallucination and part mobility estimation for point clouds."""

from .config import RunConfig, load_config
from .training import Pipeline, evaluate_model, load_pipeline, run_training

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "Pipeline",
    "evaluate_model",
    "load_pipeline",
    "run_training",
    "__version__",
]
