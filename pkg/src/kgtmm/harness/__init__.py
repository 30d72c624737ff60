"""Config parsing, experiment orchestration and the ``kgtmm`` command line."""

from kgtmm.harness.config import ExperimentConfig, load_config, parse_config, serialize_config
from kgtmm.harness.experiment import compare_algorithms, run_experiment, run_sweep

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "serialize_config",
    "run_experiment",
    "run_sweep",
    "compare_algorithms",
]
