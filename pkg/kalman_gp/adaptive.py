"""
Filtering over a location set that grows and shrinks as new places are visited.

Each sampling instant runs, in order: a filter update on already-known
locations, a rank-one expansion for every newly visited location, contraction
back to the memory capacity, and, if the set changed, a reconstruction of the
state statistics from the output statistics through a static virtual
measurement.
"""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from kalman_gp import models
from kalman_gp.baseline import Dataset, empty_dataset
from kalman_gp.errors import DuplicateLocationError, InputError, TimeOrderError
from kalman_gp.filter import FilterState, MeasurementBatch, output_estimate, predict, update
from kalman_gp.kernel import SpatialKernel
from kalman_gp.numerics import cholesky_or_raise, symmetrize
from kalman_gp.representer import build_query, extend_estimate, joint_covariance
from kalman_gp.spectral import TemporalRealization
from kalman_gp.statespace import (
    RootMethod,
    StateSpaceModel,
    build_location_set,
    stationary_prior,
)

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative tolerance on whitened posterior eigenvalues exceeding the prior
VIRTUAL_NOISE_FLOOR = 1e-10


class DiscardPolicy(str, Enum):
    """Which location to drop when the set exceeds its capacity."""

    OLDEST_FIRST = "oldest_first"


@dataclass(frozen=True, eq=False)
class AdaptiveState:
    """
    Output statistics over the current location set and the state statistics
    reconstructed from them.

    ``stale`` marks that the set changed since the state statistics were last
    reconstructed.
    """

    time: float
    model: StateSpaceModel
    estimate: Array
    covariance: Array
    mean: Array
    state_covariance: Array
    last_visit: tuple[float, ...]
    capacity: int
    policy: DiscardPolicy = DiscardPolicy.OLDEST_FIRST
    nll: float = 0.0
    step: int = 0
    stale: bool = False

    @property
    def size(self) -> int:
        return self.model.size

    @property
    def points(self) -> Array:
        return self.model.locations.points


def prior_state(
    model: StateSpaceModel,
    time: float,
    capacity: int,
    policy: DiscardPolicy = DiscardPolicy.OLDEST_FIRST,
) -> AdaptiveState:
    """Adaptive state at the stationary prior over the model's location set."""
    if capacity < 1:
        raise InputError(f"Capacity must be >= 1, got {capacity}")
    if model.size > capacity:
        raise InputError(f"{model.size} initial locations exceed capacity {capacity}")
    mean, covariance = stationary_prior(model.realization, model.locations)
    C = model.output_matrix()
    return AdaptiveState(
        time=float(time),
        model=model,
        estimate=C @ mean,
        covariance=symmetrize(C @ covariance @ C.T),
        mean=mean,
        state_covariance=covariance,
        last_visit=(float("-inf"),) * model.size,
        capacity=capacity,
        policy=policy,
    )


def step_old_locations(
    state: AdaptiveState,
    batch: Optional[MeasurementBatch] = None,
    time: Optional[float] = None,
) -> AdaptiveState:
    """
    Filter step on already-known locations.

    Without a batch the statistics are predicted to ``time``.

    Raises:
        InputError: If neither a batch nor a time is given
        TimeOrderError: If the step goes back in time
        ConditioningError: As in the plain filter update
    """
    if batch is None and time is None:
        raise InputError("Give a measurement batch or a target time")
    if state.stale:
        state = refresh(state)
    filtering = FilterState(
        time=state.time,
        mean=state.mean,
        covariance=state.state_covariance,
        model=state.model,
        nll=state.nll,
        step=state.step,
    )
    if batch is None:
        assert time is not None  # noqa: S101
        filtering = predict(filtering, time)
        visits = state.last_visit
    else:
        filtering = update(filtering, batch)
        visited = list(state.last_visit)
        for index in batch.indices:
            visited[index] = batch.time
        visits = tuple(visited)
    estimate, covariance = output_estimate(filtering)
    return replace(
        state,
        time=filtering.time,
        estimate=estimate,
        covariance=covariance,
        mean=filtering.mean,
        state_covariance=filtering.covariance,
        last_visit=visits,
        nll=filtering.nll,
        step=filtering.step,
    )


def expand(state: AdaptiveState, point: ArrayLike, value: float, noise: float) -> AdaptiveState:
    """
    Add a newly visited location and correct with its measurement.

    The output statistics are extended to the new point by spatial prediction
    and then corrected by a scalar Kalman update on the appended coordinate.
    The new location is appended last.

    Raises:
        DuplicateLocationError: If the point is already in the set
        InputError: For a nonpositive noise variance
    """
    locations = state.model.locations
    if locations.index_of(point) is not None:
        raise DuplicateLocationError(f"Location {np.ravel(point).tolist()} is already in the set")
    if not noise > 0.0:
        raise InputError(f"Noise variance must be positive, got {noise}")
    query = build_query(point, locations, state.model.realization.output_variance)
    predicted = float(extend_estimate(state.estimate, query)[0])
    joint = joint_covariance(state.covariance, query)

    innovation_var = float(joint[-1, -1]) + noise
    gain = joint[:, -1] / innovation_var
    innovation = float(value) - predicted
    estimate = np.append(state.estimate, predicted) + gain * innovation
    residual = np.eye(joint.shape[0])
    residual[:, -1] -= gain
    covariance = residual @ joint @ residual.T + noise * np.outer(gain, gain)
    nll = state.nll + 0.5 * (
        LOG_2PI + np.log(innovation_var) + innovation**2 / innovation_var
    )

    enlarged = locations.with_point(point)
    LOGGER.debug("Expanded location set to %d at t=%.6g", enlarged.size, state.time)
    return replace(
        state,
        model=state.model.with_locations(enlarged),
        estimate=estimate,
        covariance=symmetrize(covariance),
        last_visit=state.last_visit + (state.time,),
        nll=float(nll),
        stale=True,
    )


def contract(state: AdaptiveState, index: int) -> AdaptiveState:
    """
    Drop one location by marginalization: its row and column are removed.

    Raises:
        InputError: If the set has a single location or the index is invalid
    """
    if state.size <= 1:
        raise InputError("Cannot contract a location set with a single location")
    if not 0 <= index < state.size:
        raise InputError(f"Location index {index} out of range for {state.size} locations")
    keep = np.delete(np.arange(state.size), index)
    visits = tuple(v for i, v in enumerate(state.last_visit) if i != index)
    return replace(
        state,
        model=state.model.with_locations(state.model.locations.without(index)),
        estimate=state.estimate[keep],
        covariance=state.covariance[np.ix_(keep, keep)],
        last_visit=visits,
        stale=True,
    )


def select_discard(state: AdaptiveState) -> int:
    """Index of the location the discard policy removes next."""
    if state.policy is DiscardPolicy.OLDEST_FIRST:
        return int(np.argmin(state.last_visit))
    raise InputError(f"Unknown discard policy {state.policy}")


def _whitened_posterior(state: AdaptiveState) -> tuple[Array, Array, Array, Array]:
    """Prior output Cholesky factor L, eigenpairs of L^{-1} Sigma_f L^{-T}, and C Sigma_s0."""
    model = state.model
    C = model.output_matrix()
    sigma_s0 = np.kron(np.eye(model.size), model.realization.stationary_covariance)
    prior_cross = C @ sigma_s0
    sigma_f0 = symmetrize(prior_cross @ C.T)
    lower = np.tril(cholesky_or_raise(sigma_f0, "prior output covariance")[0])
    half = linalg.solve_triangular(lower, state.covariance, lower=True)
    whitened = symmetrize(linalg.solve_triangular(lower, half.T, lower=True))
    eigenvalues, eigenvectors = np.linalg.eigh(whitened)
    tolerance = VIRTUAL_NOISE_FLOOR * max(float(np.trace(whitened)), 1.0)
    if float(eigenvalues[-1]) > 1.0 + tolerance:
        LOGGER.warning(
            "Output covariance exceeds the prior (max whitened eigenvalue %.6g); "
            "flooring the virtual measurement precision at zero",
            float(eigenvalues[-1]),
        )
    return lower, np.clip(eigenvalues, 0.0, 1.0), eigenvectors, prior_cross


def reconstruct_state(state: AdaptiveState) -> tuple[Array, Array]:
    """
    State statistics consistent with the current output statistics.

    The output statistics are read as the prior observed through a static
    virtual measurement with covariance ((Sigma_f)^{-1} - (Sigma_f0)^{-1})^{-1}.
    Working in coordinates where the prior output covariance is the identity,
    the posterior has eigenvalues mu in [0, 1] and
    (Sigma_f0 + virtual)^{-1} = L^{-T} V diag(1 - mu) V^T L^{-1}, which also
    covers directions without information (mu = 1).

    Returns:
        A tuple of (mean, covariance) with C mean = estimate

    Raises:
        ConditioningError: If the prior output covariance is singular
    """
    lower, mu, vectors, prior_cross = _whitened_posterior(state)
    projected = linalg.solve_triangular(lower, vectors, lower=True, trans="T")
    gram_inverse = (projected * (1.0 - mu)) @ projected.T
    sigma_s0 = np.kron(np.eye(state.size), state.model.realization.stationary_covariance)
    mean = prior_cross.T @ linalg.cho_solve((lower, True), state.estimate)
    covariance = sigma_s0 - prior_cross.T @ gram_inverse @ prior_cross
    return mean, symmetrize(covariance)


def virtual_noise_covariance(state: AdaptiveState) -> tuple[Array, Array]:
    """
    Virtual measurement noise as (basis, variances).

    The covariance is basis @ diag(variances) @ basis.T; a variance is
    infinite along directions that carry no information.
    """
    lower, mu, vectors, _ = _whitened_posterior(state)
    one_minus = 1.0 - mu
    variances = np.full_like(mu, np.inf)
    informative = one_minus > VIRTUAL_NOISE_FLOOR
    variances[informative] = mu[informative] / one_minus[informative]
    return lower @ vectors, variances


def refresh(state: AdaptiveState) -> AdaptiveState:
    """Reconstruct the state statistics after the location set changed."""
    mean, covariance = reconstruct_state(state)
    return replace(state, mean=mean, state_covariance=covariance, stale=False)


@dataclass(frozen=True)
class Visit:
    """One measurement taken at a spatial point."""

    time: float
    point: tuple[float, ...]
    value: float
    noise: float

    @classmethod
    def create(cls, time: float, point: ArrayLike, value: float, noise: float) -> "Visit":
        return cls(
            time=float(time),
            point=tuple(float(v) for v in np.ravel(point)),
            value=float(value),
            noise=float(noise),
        )


@dataclass(frozen=True, eq=False)
class AdaptiveRecord:
    """Adaptive output after one sampling instant."""

    time: float
    step: int
    points: Array
    estimate: Array
    variance: Array
    nll: float
    ignored: int

    def to_record(self) -> models.TrajectoryRecord:
        """JSON-lines record including the location-set trace."""
        return models.TrajectoryRecord(
            t=self.time,
            kind="batch",
            step=self.step,
            estimate=self.estimate.tolist(),
            variance=self.variance.tolist(),
            nll=self.nll,
            locations=self.points.tolist(),
        )


class AdaptiveFilter:
    """
    Stateful adaptive regressor fed one sampling instant at a time.

    After ``freeze_time`` the location set no longer changes and visits to
    unknown locations are ignored.
    """

    def __init__(
        self,
        realization: TemporalRealization,
        spatial_kernel: SpatialKernel,
        capacity: int,
        policy: DiscardPolicy = DiscardPolicy.OLDEST_FIRST,
        freeze_time: Optional[float] = None,
        initial_locations: Optional[ArrayLike] = None,
        root_method: RootMethod = RootMethod.SYMMETRIC,
    ) -> None:
        if capacity < 1:
            raise InputError(f"Capacity must be >= 1, got {capacity}")
        self.realization = realization
        self.spatial_kernel = spatial_kernel
        self.capacity = capacity
        self.policy = policy
        self.freeze_time = freeze_time
        self.root_method = root_method
        self.initial_locations = (
            None if initial_locations is None else np.asarray(initial_locations, dtype=float)
        )
        self.state: Optional[AdaptiveState] = None
        self.ignored = 0
        self._used: list[Visit] = []

    def _model(self, points: ArrayLike) -> StateSpaceModel:
        locations = build_location_set(points, self.spatial_kernel, method=self.root_method)
        return StateSpaceModel(self.realization, locations)

    def _start(self, time: float, visits: Sequence[Visit]) -> AdaptiveState:
        if self.initial_locations is not None:
            model = self._model(self.initial_locations)
            return prior_state(model, time, self.capacity, self.policy)
        if self.is_frozen(time):
            raise InputError("The location set is frozen before any location was visited")
        if not visits:
            raise InputError("The first step needs at least one visit")
        first = np.asarray(visits[0].point).reshape(1, -1)
        return prior_state(self._model(first), time, self.capacity, self.policy)

    def is_frozen(self, time: float) -> bool:
        """Whether the location set is frozen at ``time``."""
        return self.freeze_time is not None and time > self.freeze_time

    @property
    def points(self) -> Array:
        """Current locations (empty before the first step)."""
        return np.zeros((0, 1)) if self.state is None else self.state.points

    def used_dataset(self) -> Dataset:
        """Every measurement that entered the statistics."""
        if not self._used:
            return empty_dataset(self.points.shape[1])
        return Dataset(
            locations=np.asarray([v.point for v in self._used]),
            times=np.asarray([v.time for v in self._used]),
            values=np.asarray([v.value for v in self._used]),
            noise=np.asarray([v.noise for v in self._used]),
        )

    def step(self, time: float, visits: Sequence[Visit]) -> AdaptiveRecord:
        """
        Process every visit of one sampling instant.

        Raises:
            TimeOrderError: If ``time`` does not exceed the previous instant
            InputError: If a location is measured twice at one instant
        """
        if any(v.time != time for v in visits):
            raise InputError("All visits of one step must share its time")
        state = self.state
        if state is None:
            state = self._start(time, visits)
        elif time <= state.time:
            raise TimeOrderError(f"Step at t={time} does not follow t={state.time}")

        frozen = self.is_frozen(time)
        old: dict[int, Visit] = {}
        new: list[Visit] = []
        for visit in visits:
            index = state.model.locations.index_of(visit.point)
            if index is not None:
                if index in old:
                    raise InputError(f"Location {visit.point} measured twice at t={time}")
                old[index] = visit
            elif frozen:
                self.ignored += 1
            elif any(v.point == visit.point for v in new):
                raise InputError(f"Location {visit.point} measured twice at t={time}")
            else:
                new.append(visit)

        batch = None
        if old:
            indices = sorted(old)
            batch = MeasurementBatch.create(
                time,
                indices,
                [old[i].value for i in indices],
                [old[i].noise for i in indices],
            )
        state = step_old_locations(state, batch, time)
        for visit in new:
            state = expand(state, visit.point, visit.value, visit.noise)
        while state.size > self.capacity:
            state = contract(state, select_discard(state))
        if state.stale:
            state = refresh(state)

        self.state = state
        self._used.extend(old.values())
        self._used.extend(new)
        return AdaptiveRecord(
            time=state.time,
            step=state.step,
            points=state.points.copy(),
            estimate=state.estimate,
            variance=np.diag(state.covariance).copy(),
            nll=state.nll,
            ignored=self.ignored,
        )


@dataclass(frozen=True, eq=False)
class AdaptiveRun:
    """Records of an adaptive run and the measurements it used."""

    records: list[AdaptiveRecord] = field(default_factory=list)
    used: Dataset = field(default_factory=empty_dataset)
    ignored: int = 0


def group_visits(visits: Iterable[Visit]) -> list[tuple[float, list[Visit]]]:
    """
    Group visits by time, keeping arrival order inside each group.

    Raises:
        TimeOrderError: If the visits are not sorted by time
    """
    groups: list[tuple[float, list[Visit]]] = []
    for visit in visits:
        if groups and visit.time < groups[-1][0]:
            raise TimeOrderError("Scenario visits must be sorted by time")
        if groups and visit.time == groups[-1][0]:
            groups[-1][1].append(visit)
        else:
            groups.append((visit.time, [visit]))
    return groups


def run_adaptive(
    visits: Iterable[Visit],
    realization: TemporalRealization,
    spatial_kernel: SpatialKernel,
    capacity: int,
    freeze_time: Optional[float] = None,
    policy: DiscardPolicy = DiscardPolicy.OLDEST_FIRST,
    initial_locations: Optional[ArrayLike] = None,
) -> AdaptiveRun:
    """
    Replay a visit scenario through the adaptive regressor.

    Args:
        visits: Measurements sorted by time; equal times form one instant
        realization: Temporal realization
        spatial_kernel: Spatial kernel
        capacity: Maximum number of retained locations
        freeze_time: Time after which the location set no longer changes
        policy: Discard policy used when the capacity is exceeded
        initial_locations: Optional starting set (otherwise the first visited point)

    Returns:
        Per-instant records and the dataset of measurements actually used
    """
    regressor = AdaptiveFilter(
        realization,
        spatial_kernel,
        capacity,
        policy=policy,
        freeze_time=freeze_time,
        initial_locations=initial_locations,
    )
    records = [regressor.step(t, group) for t, group in group_visits(visits)]
    return AdaptiveRun(records=records, used=regressor.used_dataset(), ignored=regressor.ignored)


def patrol_visits(
    count: int,
    steps: int,
    rng: np.random.Generator,
    persistence: float = 0.8,
    start: Optional[int] = None,
    allowed: Optional[Sequence[int]] = None,
) -> NDArray[np.int64]:
    """
    Random walk over candidate indices with a forcing term.

    The walker keeps its direction with probability ``persistence`` so it does
    not jitter back and forth around the same spot, and reflects at the ends.

    Args:
        count: Number of candidate locations (indices 0..count-1)
        steps: Number of visits to produce
        rng: Random generator
        persistence: Probability of keeping the current direction
        start: Starting candidate index (random if None)
        allowed: Restrict the walk to these indices, visited in sorted order

    Returns:
        Candidate indices, one per step
    """
    if count < 1 or steps < 0:
        raise InputError("Patrol needs at least one candidate and a nonnegative step count")
    lane = np.arange(count) if allowed is None else np.unique(np.asarray(allowed, dtype=int))
    if lane.size == 0 or lane.min() < 0 or lane.max() >= count:
        raise InputError("Allowed indices must be a nonempty subset of the candidates")
    if start is None:
        position = int(rng.integers(lane.size))
    else:
        matches = np.flatnonzero(lane == start)
        position = int(matches[0]) if matches.size else int(np.argmin(np.abs(lane - start)))
    direction = 1 if rng.random() < 0.5 else -1
    path = np.empty(steps, dtype=np.int64)
    for k in range(steps):
        path[k] = lane[position]
        if lane.size == 1:
            continue
        if rng.random() >= persistence:
            direction = -direction
        if not 0 <= position + direction < lane.size:
            direction = -direction
        position += direction
    return path


def recently_visited(path: Sequence[int], capacity: int) -> list[int]:
    """
    The ``capacity`` most recently visited distinct indices of a path.

    This is the set an oldest-first regressor retains after replaying the path.
    """
    retained: list[int] = []
    for index in reversed([int(i) for i in path]):
        if index not in retained:
            retained.append(index)
            if len(retained) == capacity:
                break
    return sorted(retained)
