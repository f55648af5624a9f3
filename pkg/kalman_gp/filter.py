"""
Kalman filtering of the joint state-space model.

Measurement updates happen at sampling instants; between them the state is
propagated open loop. Output-space estimates over the location set are read
off the state, and the negative log marginal likelihood is accumulated from
the innovations.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from time import perf_counter
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from kalman_gp import models
from kalman_gp.errors import InputError, TimeOrderError
from kalman_gp.numerics import cholesky_logdet, cholesky_or_raise, symmetrize
from kalman_gp.representer import SpatialQuery, extend_estimate, extend_variance
from kalman_gp.statespace import NoiseLike, StateSpaceModel, check_active, stationary_prior

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]

LOG_2PI = float(np.log(2.0 * np.pi))
GAIN_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class FilterState:
    """
    Filter statistics at one time stamp.

    ``gain`` and ``active`` describe the most recent measurement update, so a
    stream can detect when the gain has settled.
    """

    time: float
    mean: Array
    covariance: Array
    model: StateSpaceModel
    nll: float = 0.0
    step: int = 0
    gain: Optional[Array] = None
    active: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """Measurements collected at one instant, sorted by location index."""

    time: float
    indices: tuple[int, ...]
    values: Array
    noise: Array

    def __post_init__(self) -> None:
        indices = [int(i) for i in self.indices]
        values = np.asarray(self.values, dtype=float).reshape(-1)
        noise = np.asarray(self.noise, dtype=float).reshape(-1)
        if noise.size == 1 and values.size > 1:
            noise = np.full(values.size, float(noise[0]))
        if not indices:
            raise InputError("A measurement batch needs at least one measurement")
        if len(set(indices)) != len(indices) or min(indices) < 0:
            raise InputError(f"Batch indices must be unique and nonnegative, got {indices}")
        if values.size != len(indices) or noise.size != len(indices):
            raise InputError("Batch indices, values and noise must have equal lengths")
        if not np.all(np.isfinite(values)):
            raise InputError("Measurement values must be finite")
        if not np.all(np.isfinite(noise)) or np.any(noise <= 0.0):
            raise InputError("Noise variances must be positive and finite")
        order = np.argsort(indices, kind="stable")
        object.__setattr__(self, "indices", tuple(indices[i] for i in order))
        object.__setattr__(self, "values", values[order])
        object.__setattr__(self, "noise", noise[order])

    @classmethod
    def create(
        cls, time: float, indices: Sequence[int], values: ArrayLike, noise: NoiseLike = 1.0
    ) -> "MeasurementBatch":
        """Build a batch; a scalar ``noise`` applies to every measurement."""
        return cls(
            time=float(time),
            indices=tuple(indices),
            values=np.asarray(values, dtype=float),
            noise=np.asarray(noise, dtype=float),
        )


def initial_state(model: StateSpaceModel, time: float = 0.0) -> FilterState:
    """Filter state holding the stationary prior at ``time``."""
    mean, covariance = stationary_prior(model.realization, model.locations)
    return FilterState(time=float(time), mean=mean, covariance=covariance, model=model)


def _apply_blocks(
    transition: Array, mean: Array, covariance: Array, count: int
) -> tuple[Array, Array]:
    """(I (x) A) s and (I (x) A) P (I (x) A)^T without forming the Kronecker product."""
    order = transition.shape[0]
    new_mean = (mean.reshape(count, order) @ transition.T).reshape(-1)
    blocks = covariance.reshape(count, order, count, order)
    propagated = np.einsum("ij,ajbk,lk->aibl", transition, blocks, transition, optimize=True)
    return new_mean, propagated.reshape(count * order, count * order)


def predict(state: FilterState, time: float) -> FilterState:
    """
    Open-loop prediction to a later time.

    The covariance picks up the process noise I (x) Q_bar(tau), so the
    stationary prior is a fixed point.

    Raises:
        TimeOrderError: If ``time`` precedes the state's time stamp
    """
    tau = float(time) - state.time
    if tau < 0.0:
        raise TimeOrderError(f"Cannot predict backwards from t={state.time} to t={time}")
    if tau == 0.0:
        return state
    model = state.model
    transition, process_noise = model.transition_blocks(tau)
    mean, covariance = _apply_blocks(transition, state.mean, state.covariance, model.size)
    covariance = covariance + np.kron(np.eye(model.size), process_noise)
    return replace(state, time=float(time), mean=mean, covariance=symmetrize(covariance))


def _nll_term(innovation: Array, factor: tuple[Array, bool]) -> float:
    whitened = float(innovation @ linalg.cho_solve(factor, innovation))
    return 0.5 * (innovation.size * LOG_2PI + cholesky_logdet(factor) + whitened)


def nll_increment(innovation: ArrayLike, covariance: ArrayLike, previous: float = 0.0) -> float:
    """
    Add one innovation's negative log-likelihood term to a running total.

    Args:
        innovation: Innovation vector i(k) of size m
        covariance: Innovation covariance I(k), m x m
        previous: Accumulated value before this step

    Returns:
        previous + (m log 2 pi + log det I(k) + i^T I(k)^{-1} i) / 2

    Raises:
        ConditioningError: If the covariance is not positive definite
    """
    vector = np.atleast_1d(np.asarray(innovation, dtype=float))
    matrix = np.atleast_2d(np.asarray(covariance, dtype=float))
    factor = cholesky_or_raise(matrix, "innovation covariance")
    return previous + _nll_term(vector, factor)


def update(
    state: FilterState, batch: MeasurementBatch, gain: Optional[Array] = None
) -> FilterState:
    """
    Predict to the batch time, then correct with the batch.

    The covariance uses the Joseph form and is resymmetrized. A precomputed
    ``gain`` may be passed for steady-state operation; the likelihood is still
    computed from the exact innovation covariance.

    Raises:
        TimeOrderError: If the batch precedes the state
        InputError: If a batch index is out of range
        ConditioningError: If the innovation covariance is not positive definite
    """
    predicted = predict(state, batch.time)
    model = predicted.model
    active = check_active(batch.indices, model.size)
    C = model.output_matrix(active)
    R = np.diag(batch.noise)
    covariance = predicted.covariance

    innovation = batch.values - C @ predicted.mean
    cross = C @ covariance
    innovation_cov = symmetrize(cross @ C.T + R)
    factor = cholesky_or_raise(innovation_cov, "innovation covariance")
    if gain is None:
        gain = linalg.cho_solve(factor, cross).T

    mean = predicted.mean + gain @ innovation
    residual = np.eye(model.state_dimension) - gain @ C
    posterior = residual @ covariance @ residual.T + gain @ R @ gain.T
    return replace(
        predicted,
        mean=mean,
        covariance=symmetrize(posterior),
        nll=predicted.nll + _nll_term(innovation, factor),
        step=predicted.step + 1,
        gain=gain,
        active=active,
    )


def output_estimate(state: FilterState) -> tuple[Array, Array]:
    """Output mean and covariance over the location set."""
    C = state.model.output_matrix()
    return C @ state.mean, symmetrize(C @ state.covariance @ C.T)


@dataclass(frozen=True, eq=False)
class StreamOutput:
    """Filter output emitted at a batch or query time."""

    time: float
    kind: str
    step: int
    estimate: Array
    covariance: Array
    nll: float
    query_estimate: Optional[Array] = None
    query_variance: Optional[Array] = None
    elapsed: Optional[float] = None

    def to_record(self) -> models.TrajectoryRecord:
        """JSON-lines record with the diagonal of the output covariance."""
        return models.TrajectoryRecord(
            t=self.time,
            kind="batch" if self.kind == "batch" else "query",
            step=self.step,
            estimate=self.estimate.tolist(),
            variance=np.diag(self.covariance).tolist(),
            nll=self.nll,
            query_estimate=[] if self.query_estimate is None else self.query_estimate.tolist(),
            query_variance=[] if self.query_variance is None else self.query_variance.tolist(),
            elapsed=self.elapsed,
        )


def _emit(
    state: FilterState, kind: str, query: Optional[SpatialQuery], elapsed: Optional[float] = None
) -> StreamOutput:
    estimate, covariance = output_estimate(state)
    query_estimate = query_variance = None
    if query is not None:
        query_estimate = extend_estimate(estimate, query)
        query_variance = extend_variance(covariance, query)
    return StreamOutput(
        time=state.time,
        kind=kind,
        step=state.step,
        estimate=estimate,
        covariance=covariance,
        nll=state.nll,
        query_estimate=query_estimate,
        query_variance=query_variance,
        elapsed=elapsed,
    )


def _gain_settled(state: FilterState, previous: Optional[Array], batch: MeasurementBatch) -> bool:
    return (
        previous is not None
        and state.gain is not None
        and state.active == batch.indices
        and state.gain.shape == previous.shape
        and float(np.max(np.abs(state.gain - previous))) <= GAIN_TOLERANCE
    )


def run_stream(
    model: StateSpaceModel,
    batches: Sequence[MeasurementBatch],
    query_times: Sequence[float] = (),
    query: Optional[SpatialQuery] = None,
    initial: Optional[FilterState] = None,
    steady_state_gain: bool = False,
    timer: Callable[[], float] = perf_counter,
) -> list[StreamOutput]:
    """
    Run the filter over a batch schedule and emit outputs.

    Outputs are emitted at every batch time (after the update) and at every
    query time (from a prediction of the current state, which is left
    untouched). A query time equal to a batch time yields a single output.

    Args:
        model: Joint state-space model
        batches: Measurement batches with strictly increasing times
        query_times: Additional output times
        query: Optional off-grid spatial query evaluated at every output
        initial: Starting state; the stationary prior at the earliest time if None
        steady_state_gain: Reuse the previous gain once it stops changing
            under an unchanged active set and step length
        timer: Clock used to time each update

    Returns:
        Outputs in time order

    Raises:
        TimeOrderError: If batch times are not strictly increasing
    """
    batch_times = [b.time for b in batches]
    if any(b <= a for a, b in zip(batch_times, batch_times[1:])):
        raise TimeOrderError("Batch times must be strictly increasing")
    queries = sorted(float(t) for t in query_times)

    if initial is None:
        start = min(batch_times[:1] + queries[:1], default=0.0)
        initial = initial_state(model, start)
    state = initial
    if queries and queries[0] < state.time:
        raise TimeOrderError("Query times cannot precede the initial state")

    outputs: list[StreamOutput] = []
    previous_gain: Optional[Array] = None
    previous_step: Optional[float] = None
    q = 0
    for batch in batches:
        while q < len(queries) and queries[q] < batch.time:
            outputs.append(_emit(predict(state, queries[q]), "query", query))
            q += 1
        step_length = batch.time - state.time
        reuse = (
            steady_state_gain
            and previous_step is not None
            and abs(step_length - previous_step) <= 1e-12 * max(abs(step_length), 1.0)
            and _gain_settled(state, previous_gain, batch)
        )
        tick = timer()
        new_state = update(state, batch, gain=state.gain if reuse else None)
        elapsed = timer() - tick
        previous_gain, previous_step = state.gain, step_length
        state = new_state
        LOGGER.debug("Update %d at t=%.6g, nll=%.6g", state.step, state.time, state.nll)
        outputs.append(_emit(state, "batch", query, elapsed))
        while q < len(queries) and queries[q] == batch.time:
            q += 1
    for t in queries[q:]:
        outputs.append(_emit(predict(state, t), "query", query))
    return outputs

