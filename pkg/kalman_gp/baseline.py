"""
Batch Gaussian-process regression over space-time data.

The full batch GP is the exactness reference for the filter; the truncated GP
keeps only the last q sampling instants and is the finite-memory competitor.
Synthetic data are drawn exactly from the separable prior.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from kalman_gp.errors import InputError, UndefinedFitError
from kalman_gp.filter import MeasurementBatch
from kalman_gp.kernel import SeparableKernel
from kalman_gp.numerics import (
    as_points,
    cholesky_logdet,
    cholesky_or_raise,
    jittered_cholesky,
    symmetrize,
)
from kalman_gp.statespace import LocationSet

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]
NoiseModel = Union[float, Callable[[Array], Array]]

LOG_2PI = float(np.log(2.0 * np.pi))


def _record_points(locations: ArrayLike, count: int) -> Array:
    """One location row per record; a flat array is split evenly across records."""
    array = np.asarray(locations, dtype=float)
    if array.ndim == 2:
        return array
    if array.size == 0:
        return np.zeros((0, 1))
    if count == 0 or array.ndim != 1 or array.size % count:
        raise InputError(f"Cannot read {array.shape} locations for {count} records")
    return array.reshape(count, -1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Space-time measurement records, stably ordered by time.

    ``field`` holds the noiseless process values when the data are synthetic.
    """

    locations: Array
    times: Array
    values: Array
    noise: Array
    field: Optional[Array] = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).reshape(-1)
        locations = _record_points(self.locations, times.size)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        noise = np.asarray(self.noise, dtype=float).reshape(-1)
        if noise.size == 1 and times.size > 1:
            noise = np.full(times.size, float(noise[0]))
        if not locations.shape[0] == times.size == values.size == noise.size:
            raise InputError("Dataset columns must have equal lengths")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(times))):
            raise InputError("Dataset times and values must be finite")
        if np.any(noise <= 0.0) or not np.all(np.isfinite(noise)):
            raise InputError("Dataset noise variances must be positive and finite")
        order = np.argsort(times, kind="stable")
        object.__setattr__(self, "locations", locations[order])
        object.__setattr__(self, "times", times[order])
        object.__setattr__(self, "values", values[order])
        object.__setattr__(self, "noise", noise[order])
        if self.field is not None:
            field = np.asarray(self.field, dtype=float).reshape(-1)
            if field.size != times.size:
                raise InputError("Dataset field must match the number of records")
            object.__setattr__(self, "field", field[order])

    @property
    def size(self) -> int:
        return int(self.times.size)

    @property
    def dimension(self) -> int:
        return int(self.locations.shape[1])

    @property
    def step_times(self) -> Array:
        """Distinct sampling instants in increasing order."""
        return np.unique(self.times)

    def subset(self, mask: ArrayLike) -> "Dataset":
        """Records selected by a boolean mask or index array."""
        selector = np.asarray(mask)
        return Dataset(
            locations=self.locations[selector],
            times=self.times[selector],
            values=self.values[selector],
            noise=self.noise[selector],
            field=None if self.field is None else self.field[selector],
        )

    def until(self, time: float) -> "Dataset":
        """Records with t <= time."""
        return self.subset(self.times <= time)

    def batches(self, location_set: LocationSet) -> list[MeasurementBatch]:
        """
        Group records into one measurement batch per sampling instant.

        Raises:
            InputError: If a record is off the location set or a location is
                measured twice at one instant
        """
        indices = np.empty(self.size, dtype=int)
        for i, point in enumerate(self.locations):
            index = location_set.index_of(point)
            if index is None:
                raise InputError(f"Record {i} at {point.tolist()} is not on the location set")
            indices[i] = index
        batches = []
        for t in self.step_times:
            rows = np.flatnonzero(self.times == t)
            batches.append(
                MeasurementBatch.create(
                    t, indices[rows].tolist(), self.values[rows], self.noise[rows]
                )
            )
        return batches


def empty_dataset(dimension: int = 1) -> Dataset:
    """A dataset with no records."""
    return Dataset(
        locations=np.zeros((0, dimension)),
        times=np.zeros(0),
        values=np.zeros(0),
        noise=np.zeros(0),
    )


def _query_arrays(
    dataset_dim: int, locations: ArrayLike, times: ArrayLike
) -> tuple[Array, Array]:
    points = as_points(locations, dataset_dim)
    stamps = np.asarray(times, dtype=float).reshape(-1)
    if stamps.size == 1 and points.shape[0] > 1:
        stamps = np.full(points.shape[0], float(stamps[0]))
    if stamps.size != points.shape[0]:
        raise InputError("Each query location needs exactly one query time")
    return points, stamps


def _solve_system(dataset: Dataset, kernel: SeparableKernel) -> tuple[tuple[Array, bool], Array]:
    gram = kernel.gram(dataset.locations, dataset.times, dataset.locations, dataset.times)
    system = symmetrize(gram) + np.diag(dataset.noise)
    factor = cholesky_or_raise(system, "batch GP system matrix")
    return factor, linalg.cho_solve(factor, dataset.values)


def batch_gp_joint(
    dataset: Dataset,
    kernel: SeparableKernel,
    query_locations: ArrayLike,
    query_times: ArrayLike,
) -> tuple[Array, Array]:
    """
    Batch GP posterior mean and full covariance at space-time queries.

    Raises:
        ConditioningError: If K + diag(noise) is not positive definite
    """
    points, stamps = _query_arrays(dataset.dimension, query_locations, query_times)
    prior = symmetrize(kernel.gram(points, stamps, points, stamps))
    if dataset.size == 0:
        return np.zeros(stamps.size), prior
    factor, coefficients = _solve_system(dataset, kernel)
    cross = kernel.gram(points, stamps, dataset.locations, dataset.times)
    mean = cross @ coefficients
    covariance = prior - cross @ linalg.cho_solve(factor, cross.T)
    return mean, symmetrize(covariance)


def batch_gp(
    dataset: Dataset,
    kernel: SeparableKernel,
    query_locations: ArrayLike,
    query_times: ArrayLike,
) -> tuple[Array, Array]:
    """
    Batch GP posterior means and variances at space-time queries.

    Args:
        dataset: All measurements
        kernel: Separable space-time kernel
        query_locations: Query points, shape (P, d)
        query_times: One time per query point (or a single shared time)

    Returns:
        A tuple of (means, variances), each of length P

    Raises:
        ConditioningError: If K + diag(noise) is not positive definite
    """
    points, stamps = _query_arrays(dataset.dimension, query_locations, query_times)
    prior = kernel.spatial.from_distance(np.zeros(stamps.size)) * kernel.temporal.covariance(
        np.zeros(stamps.size)
    )
    if dataset.size == 0:
        return np.zeros(stamps.size), prior
    factor, coefficients = _solve_system(dataset, kernel)
    cross = kernel.gram(points, stamps, dataset.locations, dataset.times)
    means = cross @ coefficients
    explained = np.sum(cross * linalg.cho_solve(factor, cross.T).T, axis=1)
    return means, np.clip(prior - explained, 0.0, None)


def batch_nll(dataset: Dataset, kernel: SeparableKernel) -> float:
    """
    Negative log marginal likelihood -log N(y; 0, K + diag(noise)).

    Raises:
        ConditioningError: If K + diag(noise) is not positive definite
    """
    if dataset.size == 0:
        return 0.0
    factor, coefficients = _solve_system(dataset, kernel)
    return 0.5 * (
        float(dataset.values @ coefficients) + cholesky_logdet(factor) + dataset.size * LOG_2PI
    )


@dataclass(frozen=True, eq=False)
class GPStep:
    """Batch GP output at one sampling instant."""

    time: float
    mean: Array
    variance: Array


def truncated_gp(
    dataset: Dataset,
    kernel: SeparableKernel,
    buffer: Optional[int],
    query_locations: ArrayLike,
    step_times: Optional[Sequence[float]] = None,
) -> list[GPStep]:
    """
    Sliding-window batch GP over the last ``buffer`` sampling instants.

    At each instant t_k the GP is fit on the data of t_{k-q+1}..t_k and
    evaluated at the query locations at time t_k. ``buffer=None`` keeps every
    past instant (the full batch GP).

    Raises:
        InputError: If buffer < 1
    """
    if buffer is not None and buffer < 1:
        raise InputError(f"Buffer length must be >= 1, got {buffer}")
    instants = dataset.step_times
    evaluation = instants if step_times is None else np.asarray(step_times, dtype=float)
    points = as_points(query_locations, dataset.dimension)
    steps = []
    for t in evaluation:
        past = instants[instants <= t]
        window = past if buffer is None else past[-buffer:]
        mask = np.isin(dataset.times, window)
        means, variances = batch_gp(dataset.subset(mask), kernel, points, t)
        steps.append(GPStep(time=float(t), mean=means, variance=variances))
    return steps


def fit_percent(estimate: ArrayLike, reference: ArrayLike) -> float:
    """
    Fit (1 - |estimate - reference| / |reference|) * 100.

    Raises:
        InputError: If the vectors differ in length
        UndefinedFitError: If the reference is all zero
    """
    e = np.asarray(estimate, dtype=float).reshape(-1)
    r = np.asarray(reference, dtype=float).reshape(-1)
    if e.size != r.size:
        raise InputError(f"Fit needs equal lengths, got {e.size} and {r.size}")
    norm = float(np.linalg.norm(r))
    if norm == 0.0:
        raise UndefinedFitError("Fit is undefined for an all-zero reference")
    return (1.0 - float(np.linalg.norm(e - r)) / norm) * 100.0


def sample_at(
    kernel: SeparableKernel,
    locations: ArrayLike,
    times: ArrayLike,
    rng: np.random.Generator,
) -> Array:
    """
    Exact joint draw of the process at arbitrary space-time points.

    Raises:
        ConditioningError: If the Gram matrix cannot be factorized with jitter
    """
    stamps = np.asarray(times, dtype=float).reshape(-1)
    points = _record_points(locations, stamps.size)
    if stamps.size == 0 or kernel.temporal.scale == 0.0:
        return np.zeros(stamps.size)
    gram = symmetrize(kernel.gram(points, stamps, points, stamps))
    factor, _ = jittered_cholesky(gram, what="space-time Gram matrix")
    lower = np.tril(factor[0])
    return lower @ rng.standard_normal(stamps.size)


def sample_process(
    kernel: SeparableKernel,
    locations: ArrayLike,
    times: ArrayLike,
    rng: np.random.Generator,
    noise: NoiseModel = 1.0,
) -> Dataset:
    """
    Draw a synthetic dataset: every location measured at every time.

    Args:
        kernel: Separable prior
        locations: Locations, shape (M, d)
        times: Sampling instants
        rng: Random generator
        noise: Noise variance, or a function mapping noiseless values to variances

    Returns:
        Dataset with the noiseless field and noisy measurements
    """
    points = as_points(locations)
    stamps = np.asarray(times, dtype=float).reshape(-1)
    record_points = np.tile(points, (stamps.size, 1))
    record_times = np.repeat(stamps, points.shape[0])
    field = sample_at(kernel, record_points, record_times, rng)
    variances = (
        np.asarray(noise(field), dtype=float)
        if callable(noise)
        else np.full(field.size, float(noise))
    )
    values = field + np.sqrt(variances) * rng.standard_normal(field.size)
    if stamps.size == 0:
        LOGGER.warning("Sampling horizon is empty; the dataset has no records")
    return Dataset(
        locations=record_points if stamps.size else np.zeros((0, points.shape[1])),
        times=record_times,
        values=values,
        noise=variances,
        field=field,
    )


def split_by_location(
    dataset: Dataset, fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """
    Split records by location: ``fraction`` of the distinct locations go to training.

    Raises:
        InputError: If fraction is outside (0, 1)
    """
    if not 0.0 < fraction < 1.0:
        raise InputError("Split fraction must lie in (0, 1)")
    unique, inverse = np.unique(dataset.locations, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    count = max(1, int(round(fraction * unique.shape[0])))
    chosen = rng.permutation(unique.shape[0])[:count]
    mask = np.isin(inverse, chosen)
    return dataset.subset(mask), dataset.subset(~mask)
