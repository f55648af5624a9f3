"""
Configuration module for kalman-gp.

This module loads and saves experiment configuration files, resolves output
locations and derives named random substreams from the run seed.
"""

import json
import zlib
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from kalman_gp.errors import KalmanGPError
from kalman_gp.models import ExperimentConfig

# Constants
APP_NAME = "kalman-gp"
CONFIG_VERSION = 1
DEFAULT_OUTPUT_DIR = Path("results")
RUN_METADATA_FILE = "run.json"
SCENARIO_FILE = "scenario.csv"
SWEEP_FILE = "sweep.csv"
FACTOR_FILE = "factor.json"
COMPARE_FILE = "compare.csv"
FLOAT_DIGITS = 17
SUBSTREAMS = ("sampling", "schedule", "optimizer", "scenario", "holdout")


class ConfigError(KalmanGPError):
    """Exception raised for configuration errors."""

    pass


def _format_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    """
    Validate a configuration mapping.

    Raises:
        ConfigError: If the document does not match the schema
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_format_validation(e)}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment configuration from a JSON file.

    Args:
        path: Path to the JSON document

    Returns:
        The validated configuration

    Raises:
        ConfigError: If the file cannot be read, is not JSON, or fails validation
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file {path} is not valid JSON (line {e.lineno})") from e
    except OSError as e:
        raise ConfigError(f"Failed to read configuration {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a JSON object")
    return parse_config(data)


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    """
    Write a configuration as JSON so it re-parses to an equal configuration.

    Raises:
        ConfigError: If the file cannot be written
    """
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(config.model_dump_json(indent=2) + "\n")
    except OSError as e:
        raise ConfigError(f"Failed to save configuration: {e}") from e


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out: Optional[Union[str, Path]] = None,
    mode: Optional[str] = None,
    query_points: Optional[Sequence[Sequence[float]]] = None,
) -> ExperimentConfig:
    """
    Apply command-line overrides and re-validate.

    Query points are appended to the configured ones.

    Raises:
        ConfigError: If an override is invalid
    """
    data = config.model_dump(mode="json")
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["outputs"]["directory"] = str(out)
    if mode is not None:
        data["mode"] = mode
    if query_points is not None:
        data["queries"]["points"] = [
            *data["queries"]["points"],
            *([float(v) for v in point] for point in query_points),
        ]
    return parse_config(data)


def resolve_output_dir(config: ExperimentConfig, create: bool = True) -> Path:
    """
    Output directory of a run.

    Raises:
        ConfigError: If the directory cannot be created
    """
    directory = Path(config.outputs.directory or DEFAULT_OUTPUT_DIR)
    if create:
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Failed to create output directory {directory}: {e}") from e
    return directory


def substream(seed: int, name: str) -> np.random.Generator:
    """
    Independent generator for a named purpose, derived from the run seed.

    The same (seed, name) always yields the same stream, whatever other
    streams were drawn before.
    """
    if name not in SUBSTREAMS:
        raise ConfigError(f"Unknown random substream {name!r}; expected one of {SUBSTREAMS}")
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence([seed, key]))
