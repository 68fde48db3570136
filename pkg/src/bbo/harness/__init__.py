"""Run configuration, experiment registry, seed runner, criteria checks and CLI."""

from .compare import Verdict, compare, evaluate, parse_criteria
from .config import ConfigError, RunConfig, load_config, parse_config
from .experiments import EXPERIMENTS, get_experiment
from .runner import MetricRow, aggregate, read_rows, run
