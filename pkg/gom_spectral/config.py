"""
Environment configuration for the gom_spectral commands
"""

import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    # an empty variable counts as unset
    return int(os.getenv(name) or default)


GGOM_SEED: Optional[str] = os.getenv("GGOM_SEED")
GGOM_JOBS: int = _env_int("GGOM_JOBS", 1)
GGOM_CACHE_DIR: Optional[str] = os.getenv("GGOM_CACHE_DIR")
GGOM_LOG_LEVEL: str = os.getenv("GGOM_LOG_LEVEL", "INFO").upper()

DEFAULT_SEED: int = 20240101


def resolve_seed(flag_seed: Optional[int]) -> int:
    """
    Returns the seed to use: GGOM_SEED wins over the --seed flag, which wins over the default
    """
    env_seed = os.getenv("GGOM_SEED", GGOM_SEED)
    if env_seed:
        return int(env_seed)
    if flag_seed is not None:
        return int(flag_seed)
    return DEFAULT_SEED


def resolve_jobs(flag_jobs: Optional[int]) -> int:
    """
    Returns the worker count for batch runs, never below 1; the --jobs flag wins
    over GGOM_JOBS
    """
    jobs = flag_jobs if flag_jobs is not None else _env_int("GGOM_JOBS", GGOM_JOBS)
    return max(int(jobs), 1)
