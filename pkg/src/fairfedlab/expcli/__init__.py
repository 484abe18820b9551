from .config import ExperimentConfig, load_config, parse_config_text
from .runner import (
    cmd_bounds,
    cmd_finetune,
    cmd_partition_stats,
    cmd_pf_compare,
    cmd_run,
)
from .verify import run_verify

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config_text",
    "cmd_run",
    "cmd_finetune",
    "cmd_pf_compare",
    "cmd_bounds",
    "cmd_partition_stats",
    "run_verify",
]
