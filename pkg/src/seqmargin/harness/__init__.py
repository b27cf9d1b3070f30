from .cli import cli_main
from .config import ExperimentConfig, load_config, validate_config
from .io import write_summary, write_trace
from .runner import run_experiment
