"""
Tests for the config module.
"""

import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from kalman_gp import config
from kalman_gp.config import ConfigError
from kalman_gp.models import ExperimentConfig, LocationsConfig, Mode, NoiseConfig, ScheduleConfig


@pytest.fixture
def config_data() -> dict[str, Any]:
    """Return a minimal valid configuration mapping."""
    return {
        "kernel": {
            "spatial": {"family": "squared_exponential", "length_scale": 5.0},
            "temporal": {"family": "exponential", "scale": 1.0, "decay": 2.0},
        },
        "locations": {"grid": {"start": 0.0, "stop": 10.0, "count": 3}},
        "schedule": {"step": 0.2, "horizon": 10.0},
        "seed": 4,
    }


@pytest.fixture
def config_file(tmp_path: Path, config_data: dict[str, Any]) -> Path:
    """Write the minimal configuration to a temporary file."""
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(config_data))
    return path


def test_load_config_success(config_file: Path) -> None:
    """Test loading a valid configuration file."""
    loaded = config.load_config(config_file)
    assert loaded.seed == 4
    assert loaded.mode is Mode.FILTER
    assert loaded.noise.variance == 1.0
    assert loaded.kernel.spatial.length_scale == 5.0


def test_save_config_round_trip(tmp_path: Path, config_file: Path) -> None:
    """Test that a saved configuration reloads unchanged."""
    loaded = config.load_config(config_file)
    target = tmp_path / "nested" / "saved.json"
    config.save_config(loaded, target)
    assert config.load_config(target) == loaded


def test_load_config_unknown_key(tmp_path: Path, config_data: dict[str, Any]) -> None:
    """Test that a misspelled key fails validation with its location."""
    config_data["kernel"]["spatial"]["lengthscale"] = 1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(config_data))
    with pytest.raises(ConfigError, match="lengthscale"):
        config.load_config(path)


def test_load_config_invalid_json(tmp_path: Path) -> None:
    """Test that a malformed file reports the offending line."""
    path = tmp_path / "broken.json"
    path.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(ConfigError, match="line 3"):
        config.load_config(path)


def test_load_config_not_object(tmp_path: Path) -> None:
    """Test that a JSON array is rejected."""
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        config.load_config(path)


def test_load_config_missing_file(tmp_path: Path) -> None:
    """Test that a missing file is a configuration error."""
    with pytest.raises(ConfigError, match="not found"):
        config.load_config(tmp_path / "missing.json")


def test_apply_overrides(config_file: Path, tmp_path: Path) -> None:
    """Test seed, output directory and mode overrides."""
    loaded = config.load_config(config_file)
    updated = config.apply_overrides(loaded, seed=9, out=tmp_path / "out", mode="baseline")
    assert updated.seed == 9
    assert updated.outputs.directory == str(tmp_path / "out")
    assert updated.mode is Mode.BASELINE
    assert config.apply_overrides(loaded) == loaded
    with pytest.raises(ConfigError):
        config.apply_overrides(loaded, mode="unknown")
    with pytest.raises(ConfigError):
        config.apply_overrides(loaded, seed=-1)


def test_apply_overrides_query_points(config_file: Path) -> None:
    """Test that query points are appended to the configured ones."""
    loaded = config.apply_overrides(config.load_config(config_file), query_points=[[1.0]])
    updated = config.apply_overrides(loaded, query_points=[[2.5], [4.0]])
    assert updated.queries.points == [[1.0], [2.5], [4.0]]
    assert config.apply_overrides(updated, query_points=[]).queries.points == updated.queries.points


def test_holdout_fraction_range(config_file: Path) -> None:
    """Test that the training share must lie strictly inside (0, 1)."""
    data = config.load_config(config_file).model_dump(mode="json")
    data["holdout"] = {"train_fraction": 0.8}
    assert config.parse_config(data).holdout.train_fraction == 0.8
    for fraction in (0.0, 1.0):
        data["holdout"] = {"train_fraction": fraction}
        with pytest.raises(ConfigError):
            config.parse_config(data)


def test_resolve_output_dir(config_file: Path, tmp_path: Path) -> None:
    """Test that the output directory is created on demand."""
    loaded = config.apply_overrides(config.load_config(config_file), out=tmp_path / "a" / "b")
    directory = config.resolve_output_dir(loaded, create=False)
    assert not directory.exists()
    assert config.resolve_output_dir(loaded).is_dir()


def test_substream_deterministic() -> None:
    """Test that named substreams are reproducible and distinct."""
    first = config.substream(3, "sampling").random(4)
    again = config.substream(3, "sampling").random(4)
    other = config.substream(3, "schedule").random(4)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)
    assert not np.array_equal(first, config.substream(4, "sampling").random(4))


def test_substream_unknown_name() -> None:
    """Test that an unknown substream name is rejected."""
    with pytest.raises(ConfigError):
        config.substream(0, "unknown")


def test_schedule_to_times() -> None:
    """Test the count and spacing of a uniform schedule."""
    times = ScheduleConfig(step=0.2, horizon=10.0).to_times()
    assert times.size == 50
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(9.8)
    assert ScheduleConfig(step=1.0, horizon=0.0).to_times().size == 0
    np.testing.assert_array_equal(ScheduleConfig(times=[0.5, 2.0]).to_times(), [0.5, 2.0])


def test_schedule_validation() -> None:
    """Test that a schedule needs exactly one form and increasing times."""
    with pytest.raises(ValueError):
        ScheduleConfig(step=0.2)
    with pytest.raises(ValueError):
        ScheduleConfig(step=0.2, horizon=1.0, times=[0.0])
    with pytest.raises(ValueError):
        ScheduleConfig(times=[1.0, 1.0])


def test_locations_grid() -> None:
    """Test one- and two-dimensional grids and explicit points."""
    line = LocationsConfig.model_validate({"grid": {"stop": 100.0, "count": 30}}).to_array()
    assert line.shape == (30, 1)
    plane = LocationsConfig.model_validate(
        {"grid": {"stop": 1.0, "count": 3, "dimension": 2}}
    ).to_array()
    assert plane.shape == (9, 2)
    points = LocationsConfig(points=[[0.0, 1.0], [2.0, 3.0]]).to_array()
    assert points.shape == (2, 2)
    with pytest.raises(ValueError):
        LocationsConfig(points=[[0.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        LocationsConfig()


def test_noise_relative() -> None:
    """Test magnitude-relative noise with its floor."""
    noise = NoiseConfig(relative=0.1, floor=1e-4)
    np.testing.assert_allclose(noise.variances(np.array([10.0, 0.0])), [1.0, 1e-4])
    with pytest.raises(ValueError):
        NoiseConfig(variance=1.0, relative=0.1)


def test_baseline_buffer_validation(config_data: dict[str, Any]) -> None:
    """Test that a nonpositive buffer is rejected."""
    config_data["baseline"] = {"buffer": 0}
    with pytest.raises(ConfigError):
        config.parse_config(config_data)
    config_data["baseline"] = {"buffer": "auto"}
    assert config.parse_config(config_data).baseline.buffer == "auto"


def test_parse_config_returns_model(config_data: dict[str, Any]) -> None:
    """Test that parsing returns the experiment model."""
    assert isinstance(config.parse_config(config_data), ExperimentConfig)
