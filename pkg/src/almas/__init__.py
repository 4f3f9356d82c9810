"""Multi-agent pipeline that plans, writes, validates and reviews code changes."""

from .config import RunConfig, load_config
from .errors import AlmasError
from .orchestrator import RunResult, run, run_augmentation, run_generation

__version__ = "0.1.0"

__all__ = [
    "AlmasError",
    "RunConfig",
    "RunResult",
    "load_config",
    "run",
    "run_augmentation",
    "run_generation",
]
