"""
Training configuration loader for the MixSurv CLI.

Reads a flat KEY=value file (TrainConfig field names, case-insensitive) and
merges command-line overrides on top.
"""
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from mixsurv.errors import ConfigError
from mixsurv.models import TrainConfig

CONFIG_ENV_VAR = "MIXSURV_CONFIG"
LOG_LEVEL_ENV_VAR = "MIXSURV_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "INFO"


@lru_cache(maxsize=8)
def read_config_file(path: str) -> Dict[str, str]:
    """
    Parse a config file into lower-cased keys.

    Raises:
        ConfigError: if the file does not exist or has a key without a value
    """
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(
            f"Config file not found: {config_path}. "
            f"Pass --config or set {CONFIG_ENV_VAR} to an existing file."
        )
    values = dotenv_values(config_path)
    empty = [key for key, value in values.items() if value is None]
    if empty:
        raise ConfigError(f"Keys without a value in {config_path}: {', '.join(empty)}")
    return {key.strip().lower(): value.strip() for key, value in values.items()}


def resolve_config_path(cli_path: Optional[str]) -> Optional[str]:
    return cli_path or os.getenv(CONFIG_ENV_VAR) or None


def load_train_config(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """
    Build the effective TrainConfig: defaults < config file < overrides.

    Overrides set to None are ignored, so unset CLI flags fall through.

    Raises:
        ConfigError: unknown keys or values TrainConfig rejects
    """
    values: Dict[str, Any] = {}
    path = resolve_config_path(config_path)
    if path:
        values.update(read_config_file(path))
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return TrainConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
            for error in e.errors()
        )
        raise ConfigError(f"Invalid training configuration: {problems}")


def log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV_VAR, DEFAULT_LOG_LEVEL).upper()


def format_config_header(config: TrainConfig) -> str:
    """The effective config as '# key=value' lines for report headers."""
    return "".join(f"# {key}={value}\n" for key, value in config.model_dump(mode="json").items())
