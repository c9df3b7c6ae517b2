"""Configuration management for minmix."""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import psutil
import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "minmix.yaml"

BUILTIN_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "material": {"lam": 1.0, "mu": 0.5},
    "solver": {"tol": 1e-10, "precond": "block", "pin": True, "restarts": 8},
    "quadrature": {"order": 3, "load_rule": "midpoint", "interp": "center"},
    "study": {"levels": {"e1": 7, "e2": 6, "e3": 5, "traction": [2, 7]}},
    "output": {"dir": "results", "formats": ["csv", "md"]},
    "verify": {"dense_limit": 3000, "random_samples": 200, "seed": 20240601},
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_defaults(path: Optional[Path] = None) -> Dict[str, Dict[str, Any]]:
    """Load packaged defaults from YAML, falling back to built-ins."""
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        if path.exists():
            with open(path, "r") as f:
                loaded = yaml.safe_load(f) or {}
            return _merge(BUILTIN_DEFAULTS, loaded)
        logger.warning(f"Config {path} not found, using built-in defaults")
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Error loading configuration from {path}: {e}")
    return _merge(BUILTIN_DEFAULTS, {})


class Config:
    """Run environment from environment variables."""

    def __init__(self):
        physical = psutil.cpu_count(logical=False) or 1
        cap = os.getenv("MINMIX_THREADS")
        self.threads = min(physical, 8)
        self.threads_raw = cap
        if cap and cap.isdigit() and int(cap) > 0:
            self.threads = min(self.threads, int(cap))
        self.log_level = os.getenv("MINMIX_LOG_LEVEL", "INFO").upper()
        self.output_dir = os.getenv("MINMIX_OUTPUT_DIR")
        try:
            self.dense_limit = int(os.getenv("MINMIX_DENSE_LIMIT", "3000"))
        except ValueError:
            logger.warning("MINMIX_DENSE_LIMIT is not an integer, using 3000")
            self.dense_limit = 3000

    def validate(self) -> Optional[str]:
        """Check environment values that could not be applied."""
        problems = []
        if self.threads_raw and not (self.threads_raw.isdigit() and int(self.threads_raw) > 0):
            problems.append(f"MINMIX_THREADS={self.threads_raw!r} is not a positive integer")
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"MINMIX_LOG_LEVEL={self.log_level!r} is not a logging level")
        if self.dense_limit <= 0:
            problems.append("MINMIX_DENSE_LIMIT must be positive")

        if problems:
            return "; ".join(problems)
        return None

    @property
    def is_valid(self) -> bool:
        return self.validate() is None


# Global config instance
config = Config()
