"""Cell-free massive MIMO integrated sensing and communication simulator."""

from .scenario import ConfigError, ScenarioConfig
from .experiments import ExperimentSpec, preset, run_experiment

__version__ = "0.1.0"

__all__ = ["ConfigError", "ScenarioConfig", "ExperimentSpec", "preset", "run_experiment", "__version__"]
