"""
Configuration Manager
Loads the run configuration from the packaged defaults, a user YAML file,
environment variables and command-line overrides, in that order of precedence.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from pydantic import ValidationError

from fmselect.config.run_config import RunConfig
from fmselect.exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).with_name("defaults.yaml")

ENV_OVERRIDES = {
    "FMSELECT_WORKERS": ("runtime.workers", int),
    "FMSELECT_LOG_LEVEL": ("runtime.log_level", str.upper),
    "FMSELECT_OUTPUT_DIR": ("output.directory", str),
}

ENVIRONMENT = "environment"
COMMAND_LINE = "command line"


def _line_index(node, prefix: Tuple[str, ...] = ()) -> Dict[Tuple[str, ...], int]:
    """Map every mapping-key path of a composed YAML node to its 1-based line."""
    index = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            index[path] = key_node.start_mark.line + 1
            index.update(_line_index(value_node, path))
    elif isinstance(node, yaml.SequenceNode):
        for position, item in enumerate(node.value):
            path = prefix + (str(position),)
            index[path] = item.start_mark.line + 1
            index.update(_line_index(item, path))
    return index


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigManager:
    """Manages the run configuration from YAML files and environment variables."""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 defaults_path: Path = DEFAULTS_PATH):
        """Initialize configuration manager.

        Args:
            config_path: Optional user YAML file
            overrides: Dotted-key values from command-line flags; ``None`` values are skipped
            defaults_path: Packaged defaults
        """
        self.config_path = Path(config_path) if config_path else None
        self.defaults_path = Path(defaults_path)
        self.overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        self.config: Dict[str, Any] = {}
        self._origins: Dict[Tuple[str, ...], Tuple[str, Optional[int]]] = {}
        self._load_config()

    def _read_yaml(self, path: Path) -> Dict[str, Any]:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}", source=str(path)) from exc
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source=str(path),
                              line=None if mark is None else mark.line + 1) from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections", source=str(path), line=1)
        for key_path, line in _line_index(node).items():
            self._origins[key_path] = (str(path), line)
        return data

    def _load_config(self):
        """Load configuration from files, environment variables and overrides."""
        self._origins = {}
        self.config = self._read_yaml(self.defaults_path)
        if self.config_path is not None:
            self.config = _deep_merge(self.config, self._read_yaml(self.config_path))
            logger.info(f"Configuration loaded from {self.config_path}")
        self._load_env_overrides()
        for key, value in self.overrides.items():
            self.set(key, value)
            self._origins[tuple(key.split("."))] = (COMMAND_LINE, None)

    def _load_env_overrides(self):
        """Load configuration overrides from environment variables."""
        for name, (key, parse) in ENV_OVERRIDES.items():
            raw = os.getenv(name)
            if not raw:
                continue
            try:
                value = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{name}={raw!r} is not valid for {key}", source=ENVIRONMENT) from exc
            self.set(key, value)
            self._origins[tuple(key.split("."))] = (ENVIRONMENT, None)
            logger.debug(f"{name} overrides {key}")

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key.

        Args:
            key: Configuration key (dot-separated for nested values)
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        value = self.config
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Set configuration value by dotted key, creating sections as needed."""
        keys = key.split(".")
        section = self.config
        for k in keys[:-1]:
            if not isinstance(section.get(k), dict):
                section[k] = {}
            section = section[k]
        section[keys[-1]] = value

    def locate(self, path: Tuple[str, ...]) -> Tuple[Optional[str], Optional[int]]:
        """Source and line that last set ``path`` or its nearest parent."""
        for end in range(len(path), 0, -1):
            origin = self._origins.get(tuple(path[:end]))
            if origin is not None:
                return origin
        return (str(self.config_path) if self.config_path else None, None)

    def validate(self) -> RunConfig:
        """Validate the merged configuration.

        Raises:
            ConfigError: Naming the file and line of the first offending key
        """
        try:
            return RunConfig(**self.config)
        except ValidationError as exc:
            first = exc.errors()[0]
            path = tuple(str(part) for part in first["loc"])
            source, line = self.locate(path)
            where = ".".join(path) or "configuration"
            raise ConfigError(f"{where}: {first['msg']}", source=source, line=line) from exc

    def reload(self):
        """Reload configuration from files."""
        logger.info("Reloading configuration...")
        self._load_config()

    def save_config(self, path: str) -> Path:
        """Write the merged configuration as YAML."""
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=False, indent=2)
        logger.info(f"Configuration saved to {file_path}")
        return file_path


def load_run_config(config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load and validate a run configuration in one call."""
    return ConfigManager(config_path, overrides).validate()
