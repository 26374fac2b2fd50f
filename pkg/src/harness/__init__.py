"""
Experiment configuration, artifact archival and the benchmark/validation
commands (`src.harness.commands`).
"""

from src.harness.artifacts import RunArchiver, list_local_runs
from src.harness.config import ExperimentConfig, load_config, parse_config, validate

__all__ = ['ExperimentConfig', 'RunArchiver', 'list_local_runs', 'load_config', 'parse_config', 'validate']
