"""Explainable network digital twin: rate regression, delay model, Bayesian
reasoning and bandit-driven gNB association."""

from .config import RunConfig, load_config
from .errors import TwinError, ValidationError

__all__ = ["RunConfig", "load_config", "TwinError", "ValidationError"]
__version__ = "0.1.0"
