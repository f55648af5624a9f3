"""
Pydantic models for experiment configuration and emitted records.

Configuration models reject unknown keys so a typo in a config file fails
validation instead of being silently ignored.
"""

from enum import Enum
from typing import Literal, Optional, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from kalman_gp.kernel import SeparableKernel


class Mode(str, Enum):
    """What ``run`` executes."""

    FILTER = "filter"
    ADAPTIVE = "adaptive"
    BASELINE = "baseline"
    SWEEP = "sweep"


class RunStatus(str, Enum):
    """Outcome of one sweep grid point."""

    OK = "ok"
    FAILED = "failed"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LocationGrid(_Strict):
    """Equispaced grid: ``count`` points per axis on [start, stop]."""

    start: float = 0.0
    stop: float
    count: int = Field(ge=1)
    dimension: Literal[1, 2] = 1

    @model_validator(mode="after")
    def _ordered(self) -> "LocationGrid":
        if self.count > 1 and not self.stop > self.start:
            raise ValueError("grid stop must exceed start")
        return self


class LocationsConfig(_Strict):
    """Explicit location list or a grid generator."""

    points: Optional[list[list[float]]] = None
    grid: Optional[LocationGrid] = None

    @model_validator(mode="after")
    def _one_source(self) -> "LocationsConfig":
        if (self.points is None) == (self.grid is None):
            raise ValueError("give exactly one of 'points' or 'grid'")
        if self.points is not None:
            if not self.points:
                raise ValueError("'points' must not be empty")
            if len({len(p) for p in self.points}) != 1:
                raise ValueError("all points must have the same dimension")
        return self

    def to_array(self) -> NDArray[np.float64]:
        """Locations as an (M, d) array."""
        if self.points is not None:
            return np.asarray(self.points, dtype=float)
        assert self.grid is not None  # noqa: S101
        axis = np.linspace(self.grid.start, self.grid.stop, self.grid.count)
        if self.grid.dimension == 1:
            return axis.reshape(-1, 1)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


class ScheduleConfig(_Strict):
    """Uniform schedule (start, step, horizon) or explicit sampling times."""

    start: float = 0.0
    step: Optional[float] = Field(default=None, gt=0.0)
    horizon: Optional[float] = Field(default=None, ge=0.0)
    times: Optional[list[float]] = None
    active_fraction: float = Field(default=1.0, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _one_schedule(self) -> "ScheduleConfig":
        uniform = self.step is not None and self.horizon is not None
        if uniform == (self.times is not None):
            raise ValueError("give either 'step' and 'horizon' or explicit 'times'")
        if self.times is not None and any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("'times' must be strictly increasing")
        return self

    def to_times(self) -> NDArray[np.float64]:
        """Sampling instants; horizon/step of them for a uniform schedule."""
        if self.times is not None:
            return np.asarray(self.times, dtype=float)
        assert self.step is not None and self.horizon is not None  # noqa: S101
        count = int(np.floor(self.horizon / self.step + 1e-9))
        return self.start + self.step * np.arange(count)


class NoiseConfig(_Strict):
    """Homogeneous variance, or a variance relative to the measured magnitude."""

    variance: Optional[float] = Field(default=None, gt=0.0)
    relative: Optional[float] = Field(default=None, gt=0.0)
    floor: float = Field(default=1e-6, gt=0.0)

    @model_validator(mode="after")
    def _one_model(self) -> "NoiseConfig":
        if self.variance is not None and self.relative is not None:
            raise ValueError("give at most one of 'variance' or 'relative'")
        if self.variance is None and self.relative is None:
            self.variance = 1.0
        return self

    def variances(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Per-measurement noise variances for the given (noiseless) values."""
        if self.relative is not None:
            return np.maximum((self.relative * np.abs(values)) ** 2, self.floor)
        assert self.variance is not None  # noqa: S101
        return np.full(np.shape(values), self.variance)


class RealizationConfig(_Strict):
    """Exact factorization or least-squares spectral approximation."""

    source: Literal["exact", "approximate"] = "exact"
    order: int = Field(default=6, ge=1)
    grid_points: int = Field(default=400, ge=2)
    grid_min: float = Field(default=1e-3, gt=0.0)
    grid_max: float = Field(default=1e3, gt=0.0)
    restarts: int = Field(default=5, ge=1)


class QueriesConfig(_Strict):
    """Off-grid spatial query points and between-sample query times."""

    points: list[list[float]] = Field(default_factory=list)
    times: list[float] = Field(default_factory=list)


class HoldoutConfig(_Strict):
    """Location split for an out-of-sample fit; None trains on every location."""

    train_fraction: Optional[float] = Field(default=None, gt=0.0, lt=1.0)


class BaselineConfig(_Strict):
    """Truncated-GP buffer length q in steps; None runs the full batch GP."""

    buffer: Optional[Union[int, Literal["auto"]]] = None

    @model_validator(mode="after")
    def _positive(self) -> "BaselineConfig":
        if isinstance(self.buffer, int) and self.buffer < 1:
            raise ValueError("buffer must be >= 1")
        return self


class AdaptiveConfig(_Strict):
    """Adaptive scenario over the configured locations as candidates."""

    capacity: int = Field(default=10, ge=1)
    freeze_time: Optional[float] = None
    steps: int = Field(default=100, ge=1)
    persistence: float = Field(default=0.8, ge=0.0, le=1.0)


class SweepConfig(_Strict):
    """Hyperparameter grid; keys are ``temporal.scale``, ``noise.variance`` and so on."""

    grid: dict[str, list[float]] = Field(default_factory=dict)
    workers: int = Field(default=4, ge=1)


class OutputsConfig(_Strict):
    """Output directory and file names."""

    directory: str = "results"
    dataset: str = "dataset.csv"
    trajectory: str = "trajectory.jsonl"
    summary: str = "summary.csv"


class ExperimentConfig(_Strict):
    """A complete, versioned experiment description."""

    version: Literal[1] = 1
    kernel: SeparableKernel
    locations: LocationsConfig
    schedule: ScheduleConfig
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    realization: RealizationConfig = Field(default_factory=RealizationConfig)
    queries: QueriesConfig = Field(default_factory=QueriesConfig)
    holdout: HoldoutConfig = Field(default_factory=HoldoutConfig)
    mode: Mode = Mode.FILTER
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    adaptive: AdaptiveConfig = Field(default_factory=AdaptiveConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seed: int = Field(default=0, ge=0)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)


class TrajectoryRecord(BaseModel):
    """One emitted trajectory point (a JSON line)."""

    t: float
    kind: Literal["batch", "query"]
    step: int
    estimate: list[float]
    variance: list[float]
    nll: Optional[float] = None
    query_estimate: list[float] = Field(default_factory=list)
    query_variance: list[float] = Field(default_factory=list)
    locations: Optional[list[list[float]]] = None
    elapsed: Optional[float] = None


class SummaryRecord(BaseModel):
    """One row of ``summary.csv``."""

    label: str
    mode: Mode
    steps: int
    final_time: float
    fit: Optional[float] = None
    holdout_fit: Optional[float] = None
    nll: Optional[float] = None
    mean_step_seconds: float = 0.0
    max_step_seconds: float = 0.0


class SweepRecord(BaseModel):
    """One row of ``sweep.csv``."""

    index: int
    parameters: dict[str, float]
    nll: Optional[float] = None
    status: RunStatus = RunStatus.OK
    message: Optional[str] = None
