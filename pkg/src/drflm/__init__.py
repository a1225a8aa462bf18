"""Federated learning simulator comparing FedAvg, DRFA and DRFA with local mixup (DRFLM)."""
from .errors import ConfigError, DivergenceError, InvalidInputError, NumericalError, UnsupportedSizeError
from .federation import FedConfig, MixupMode, run_training
from .harness import ExperimentConfig, run_counterexample, run_experiment, run_noise_sweep
from .model import GlmModel, Link

__all__ = [
    "ConfigError", "DivergenceError", "InvalidInputError", "NumericalError", "UnsupportedSizeError",
    "FedConfig", "MixupMode", "run_training", "ExperimentConfig", "run_counterexample",
    "run_experiment", "run_noise_sweep", "GlmModel", "Link",
]
__version__ = "0.1.0"
