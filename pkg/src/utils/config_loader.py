"""
TOML run configuration.

Keys are TrainConfig field names, at top level or under a ``[train]`` table.
Values from the file override defaults; command-line flags override the file.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from src.exceptions import ConfigError
from src.models.models import TrainConfig

logger = logging.getLogger(__name__)


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if "train" in data:
        if not isinstance(data["train"], dict):
            raise ConfigError(f"[train] in {path} must be a table")
        data = {**{k: v for k, v in data.items() if k != "train"}, **data["train"]}
    return data


def build_config(file_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 base: Optional[TrainConfig] = None) -> TrainConfig:
    """Defaults (or ``base``) < config file < explicit overrides"""
    values = base.to_dict() if base is not None else {}
    if file_path:
        from_file = read_config_file(file_path)
        logger.debug("config file %s sets %s", file_path, sorted(from_file))
        values.update(from_file)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_dict(values).validate()
