"""
Experiment service layer for kalman-gp.

This module turns a validated ExperimentConfig into datasets, scenarios,
filter / adaptive / baseline runs and hyperparameter sweeps. The CLI only
handles files and presentation; everything numerical is driven from here.
"""

import asyncio
import itertools
import logging
import math
from dataclasses import dataclass, field
from time import perf_counter
from typing import Any, Optional

import numpy as np
from numpy.typing import NDArray

from kalman_gp import config as cfg
from kalman_gp.adaptive import AdaptiveFilter, Visit, group_visits, patrol_visits, recently_visited
from kalman_gp.baseline import (
    Dataset,
    batch_gp,
    fit_percent,
    sample_process,
    split_by_location,
    truncated_gp,
)
from kalman_gp.errors import InputError, KalmanGPError, UndefinedFitError
from kalman_gp.filter import StreamOutput, run_stream
from kalman_gp.models import (
    ExperimentConfig,
    Mode,
    RunStatus,
    SummaryRecord,
    SweepRecord,
    TrajectoryRecord,
)
from kalman_gp.representer import build_query
from kalman_gp.spectral import (
    SpectralFactor,
    TemporalRealization,
    approximate_psd,
    factorize,
    realize,
    three_sigma_window,
)
from kalman_gp.statespace import LocationSet, StateSpaceModel, build_location_set, simulate

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]

SWEEP_PARAMETERS = (
    "temporal.scale",
    "temporal.decay",
    "temporal.frequency",
    "spatial.length_scale",
    "spatial.amplitude",
    "noise.variance",
)


@dataclass
class RunResult:
    """Trajectory records and the summary row of one run."""

    records: list[TrajectoryRecord] = field(default_factory=list)
    summary: Optional[SummaryRecord] = None


def frequency_grid(config: ExperimentConfig) -> Array:
    """Angular frequency grid for spectral approximation."""
    settings = config.realization
    grid = np.logspace(
        np.log10(settings.grid_min), np.log10(settings.grid_max), settings.grid_points
    )
    return grid * config.kernel.temporal.characteristic_frequency


def spectral_factor(config: ExperimentConfig) -> SpectralFactor:
    """
    Exact or approximate spectral factor of the configured temporal kernel.

    Raises:
        UnsupportedExactFactorization: If an exact factor is requested for a
            non-rational kernel
        ApproximationError: If the least-squares fit fails
    """
    temporal = config.kernel.temporal
    settings = config.realization
    if settings.source == "exact":
        return factorize(temporal)
    return approximate_psd(
        temporal,
        settings.order,
        frequency_grid=frequency_grid(config),
        rng=cfg.substream(config.seed, "optimizer"),
        restarts=settings.restarts,
    )


def build_realization(config: ExperimentConfig) -> TemporalRealization:
    """Temporal realization for the configured kernel and realization source."""
    return realize(spectral_factor(config))


def build_model(
    config: ExperimentConfig, realization: Optional[TemporalRealization] = None
) -> StateSpaceModel:
    """Joint model over the configured locations."""
    locations = build_location_set(config.locations.to_array(), config.kernel.spatial)
    return StateSpaceModel(realization or build_realization(config), locations)


def generate_dataset(config: ExperimentConfig) -> Dataset:
    """
    Synthetic dataset: an exact draw of the prior at the configured locations
    and times, with random active subsets when ``active_fraction`` < 1.
    """
    times = config.schedule.to_times()
    if times.size == 0:
        LOGGER.warning("Schedule horizon is empty; generating an empty dataset")
    locations = config.locations.to_array()
    dataset = sample_process(
        config.kernel,
        locations,
        times,
        cfg.substream(config.seed, "sampling"),
        noise=config.noise.variances,
    )
    fraction = config.schedule.active_fraction
    if fraction >= 1.0 or dataset.size == 0:
        return dataset
    rng = cfg.substream(config.seed, "schedule")
    count = locations.shape[0]
    keep = max(1, int(round(fraction * count)))
    # sample_process lays records out time-major, one block of M per instant
    mask = np.zeros(dataset.size, dtype=bool)
    for k in range(times.size):
        chosen = rng.choice(count, size=keep, replace=False)
        mask[k * count + chosen] = True
    return dataset.subset(mask)


def generate_scenario(config: ExperimentConfig) -> tuple[list[Visit], list[bool]]:
    """
    Patrol scenario over the configured locations, one visit per step.

    After the freeze time the patrol is restricted to the locations an
    oldest-first regressor retains, so the frozen set keeps receiving data.

    Returns:
        The visits and, for each, whether it is the first visit of its location
    """
    candidates = config.locations.to_array()
    step = config.schedule.step or 1.0
    settings = config.adaptive
    times = config.schedule.start + step * np.arange(settings.steps)
    rng = cfg.substream(config.seed, "scenario")

    freeze = settings.freeze_time
    before = times.size if freeze is None else int(np.sum(times <= freeze))
    path = patrol_visits(candidates.shape[0], before, rng, persistence=settings.persistence)
    if before < times.size:
        allowed = recently_visited(path, settings.capacity) if before else None
        tail = patrol_visits(
            candidates.shape[0],
            times.size - before,
            rng,
            persistence=settings.persistence,
            start=int(path[-1]) if before else None,
            allowed=allowed,
        )
        path = np.concatenate([path, tail])

    model = build_model(config)
    field_values = simulate(model, times, cfg.substream(config.seed, "sampling"))
    noiseless = field_values[np.arange(times.size), path]
    variances = config.noise.variances(noiseless)
    noisy = noiseless + np.sqrt(variances) * rng.standard_normal(times.size)

    visits = [
        Visit.create(t, candidates[i], y, v)
        for t, i, y, v in zip(times, path, noisy, variances)
    ]
    seen: set[int] = set()
    flags = []
    for i in path:
        flags.append(int(i) not in seen)
        seen.add(int(i))
    return visits, flags


def _fit_or_none(estimate: Array, reference: Array) -> Optional[float]:
    try:
        return fit_percent(estimate, reference)
    except UndefinedFitError:
        LOGGER.warning("Reference estimate is identically zero; fit is undefined")
        return None


def _timing(elapsed: list[float]) -> dict[str, float]:
    if not elapsed:
        return {"mean_step_seconds": 0.0, "max_step_seconds": 0.0}
    return {
        "mean_step_seconds": float(np.mean(elapsed)),
        "max_step_seconds": float(np.max(elapsed)),
    }


def _holdout_fit(
    outputs: list[StreamOutput], held_out: Dataset, locations: LocationSet
) -> Optional[float]:
    """Fit of the streamed estimates at held-out records against their field, else their values."""
    estimates = {output.time: output.estimate for output in outputs}
    target = held_out.values if held_out.field is None else held_out.field
    predicted, observed = [], []
    for i, (point, t) in enumerate(zip(held_out.locations, held_out.times)):
        estimate = estimates.get(float(t))
        if estimate is None:
            continue
        index = locations.index_of(point)
        if index is None:
            raise InputError(f"Held-out record {i} at {point.tolist()} is not on the location set")
        predicted.append(estimate[index])
        observed.append(target[i])
    if not predicted:
        LOGGER.warning("No held-out record shares an instant with the training data")
        return None
    return _fit_or_none(np.asarray(predicted), np.asarray(observed))


def run_filter(
    config: ExperimentConfig,
    dataset: Dataset,
    realization: Optional[TemporalRealization] = None,
    label: str = "filter",
) -> RunResult:
    """
    Stream a dataset through the Kalman filter.

    The summary fit compares the final on-grid estimate with the batch GP over
    all training data at the final sampling time. With a configured holdout
    only a share of the locations is streamed; the held-out fit scores the
    estimates at the other locations at every training instant.
    """
    model = build_model(config, realization)
    training, held_out = dataset, None
    if config.holdout.train_fraction is not None:
        training, held_out = split_by_location(
            dataset, config.holdout.train_fraction, cfg.substream(config.seed, "holdout")
        )
        LOGGER.info("Streaming %d records, holding out %d", training.size, held_out.size)
    query = None
    if config.queries.points:
        query = build_query(
            config.queries.points, model.locations, model.realization.output_variance
        )
    outputs = run_stream(model, training.batches(model.locations), config.queries.times, query)
    records = [output.to_record() for output in outputs]
    batch_outputs = [o for o in outputs if o.kind == "batch"]

    fit = holdout_fit = None
    if batch_outputs:
        last = batch_outputs[-1]
        reference, _ = batch_gp(training, config.kernel, model.locations.points, last.time)
        fit = _fit_or_none(last.estimate, reference)
        if held_out is not None and held_out.size:
            holdout_fit = _holdout_fit(batch_outputs, held_out, model.locations)
    summary = SummaryRecord(
        label=label,
        mode=Mode.FILTER,
        steps=len(batch_outputs),
        final_time=batch_outputs[-1].time if batch_outputs else 0.0,
        fit=fit,
        holdout_fit=holdout_fit,
        nll=batch_outputs[-1].nll if batch_outputs else 0.0,
        **_timing([o.elapsed for o in batch_outputs if o.elapsed is not None]),
    )
    return RunResult(records=records, summary=summary)


def resolve_buffer(config: ExperimentConfig, dataset: Dataset) -> Optional[int]:
    """Truncated-GP buffer in steps; ``"auto"`` covers the kernel's 99% window."""
    buffer = config.baseline.buffer
    if buffer != "auto":
        return buffer
    instants = dataset.step_times
    step = config.schedule.step
    if step is None:
        step = float(np.median(np.diff(instants))) if instants.size > 1 else 1.0
    window = three_sigma_window(config.kernel.temporal)
    return max(1, math.ceil(window / step))


def run_baseline(config: ExperimentConfig, dataset: Dataset, label: str = "baseline") -> RunResult:
    """
    Truncated (or full) batch GP evaluated at the configured locations.

    The summary fit compares the final estimate with the full batch GP.
    """
    buffer = resolve_buffer(config, dataset)
    points = config.locations.to_array()
    records = []
    elapsed = []
    for t in dataset.step_times:
        tick = perf_counter()
        (step,) = truncated_gp(dataset, config.kernel, buffer, points, step_times=[t])
        elapsed.append(perf_counter() - tick)
        records.append(
            TrajectoryRecord(
                t=step.time,
                kind="batch",
                step=len(records) + 1,
                estimate=step.mean.tolist(),
                variance=step.variance.tolist(),
                elapsed=elapsed[-1],
            )
        )
    fit = None
    if records:
        final = dataset.step_times[-1]
        reference, _ = batch_gp(dataset, config.kernel, points, final)
        fit = _fit_or_none(np.asarray(records[-1].estimate), reference)
    summary = SummaryRecord(
        label=label if buffer is None else f"{label}-q{buffer}",
        mode=Mode.BASELINE,
        steps=len(records),
        final_time=records[-1].t if records else 0.0,
        fit=fit,
        **_timing(elapsed),
    )
    return RunResult(records=records, summary=summary)


def run_adaptive_scenario(
    config: ExperimentConfig, visits: list[Visit], label: str = "adaptive"
) -> RunResult:
    """
    Replay a scenario through the adaptive regressor.

    The summary fit compares the final estimate on the retained locations with
    the batch GP over the measurements the regressor actually used.
    """
    settings = config.adaptive
    regressor = AdaptiveFilter(
        build_realization(config),
        config.kernel.spatial,
        settings.capacity,
        freeze_time=settings.freeze_time,
    )
    records = []
    elapsed = []
    last = None
    for t, group in group_visits(visits):
        tick = perf_counter()
        last = regressor.step(t, group)
        elapsed.append(perf_counter() - tick)
        record = last.to_record()
        record.elapsed = elapsed[-1]
        records.append(record)
    fit = None
    if last is not None:
        reference, _ = batch_gp(regressor.used_dataset(), config.kernel, last.points, last.time)
        fit = _fit_or_none(last.estimate, reference)
    if regressor.ignored:
        LOGGER.info("Ignored %d visits to new locations after the freeze", regressor.ignored)
    summary = SummaryRecord(
        label=label,
        mode=Mode.ADAPTIVE,
        steps=len(records),
        final_time=last.time if last is not None else 0.0,
        fit=fit,
        nll=last.nll if last is not None else 0.0,
        **_timing(elapsed),
    )
    return RunResult(records=records, summary=summary)


def with_parameters(config: ExperimentConfig, parameters: dict[str, float]) -> ExperimentConfig:
    """
    Copy of a configuration with sweep parameters substituted.

    Raises:
        ConfigError: For unknown parameter names or invalid values
    """
    data: dict[str, Any] = config.model_dump(mode="json")
    for name, value in parameters.items():
        if name not in SWEEP_PARAMETERS:
            raise cfg.ConfigError(
                f"Unknown sweep parameter {name!r}; expected one of {SWEEP_PARAMETERS}"
            )
        section, key = name.split(".")
        if section == "noise":
            data["noise"] = {"variance": value}
        else:
            data["kernel"][section][key] = value
    return cfg.parse_config(data)


def sweep_points(config: ExperimentConfig) -> list[dict[str, float]]:
    """
    Cartesian product of the sweep grid, in a stable order.

    Raises:
        ConfigError: If the grid is empty or names an unknown parameter
    """
    grid = config.sweep.grid
    if not grid or any(not values for values in grid.values()):
        raise cfg.ConfigError("Sweep grid must name at least one parameter with values")
    unknown = sorted(set(grid) - set(SWEEP_PARAMETERS))
    if unknown:
        raise cfg.ConfigError(f"Unknown sweep parameters {unknown}")
    names = sorted(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def _sweep_point(
    index: int, parameters: dict[str, float], config: ExperimentConfig, dataset: Dataset
) -> SweepRecord:
    try:
        point = with_parameters(config, parameters)
        data = dataset
        if "noise.variance" in parameters:
            data = Dataset(
                locations=dataset.locations,
                times=dataset.times,
                values=dataset.values,
                noise=np.full(dataset.size, parameters["noise.variance"]),
            )
        model = build_model(point)
        outputs = run_stream(model, data.batches(model.locations))
        nll = outputs[-1].nll if outputs else 0.0
        return SweepRecord(index=index, parameters=parameters, nll=nll)
    except (KalmanGPError, ValueError, np.linalg.LinAlgError) as e:
        LOGGER.warning("Sweep point %d %s failed: %s", index, parameters, e)
        return SweepRecord(
            index=index, parameters=parameters, status=RunStatus.FAILED, message=str(e)
        )


async def run_sweep_async(config: ExperimentConfig, dataset: Dataset) -> list[SweepRecord]:
    """
    Evaluate the streamed NLL at every sweep grid point concurrently.

    Each grid point runs its own filter in a worker thread; at most
    ``sweep.workers`` run at once. A failing point is recorded, not raised.

    Raises:
        ConfigError: If the grid is invalid
    """
    points = sweep_points(config)
    semaphore = asyncio.Semaphore(config.sweep.workers)

    async def evaluate(index: int, parameters: dict[str, float]) -> SweepRecord:
        async with semaphore:
            return await asyncio.to_thread(_sweep_point, index, parameters, config, dataset)

    records = await asyncio.gather(*(evaluate(i, p) for i, p in enumerate(points)))
    return sorted(records, key=lambda record: record.index)


def run_sweep(config: ExperimentConfig, dataset: Dataset) -> list[SweepRecord]:
    """
    Evaluate the streamed NLL at every sweep grid point.

    Raises:
        ConfigError: If the grid is invalid
    """
    return asyncio.run(run_sweep_async(config, dataset))


def best_sweep_point(records: list[SweepRecord]) -> Optional[SweepRecord]:
    """The successful grid point with the smallest NLL."""
    ok = [r for r in records if r.status is RunStatus.OK and r.nll is not None]
    return min(ok, key=lambda r: r.nll or 0.0) if ok else None
