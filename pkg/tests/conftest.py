"""
Shared fixtures: kernels, realizations and random small problem instances.
"""

from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np
import pytest

from kalman_gp.baseline import Dataset
from kalman_gp.filter import MeasurementBatch
from kalman_gp.kernel import (
    SeparableKernel,
    SpatialFamily,
    SpatialKernel,
    TemporalFamily,
    TemporalKernel,
)
from kalman_gp.spectral import TemporalRealization, factorize, realize
from kalman_gp.statespace import StateSpaceModel, build_location_set


@dataclass
class Instance:
    """A random small regression problem on a location set."""

    kernel: SeparableKernel
    model: StateSpaceModel
    batches: list[MeasurementBatch]
    dataset: Dataset
    queries: np.ndarray


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def exponential_kernel() -> TemporalKernel:
    """Return the exponential temporal kernel with unit scale and decay."""
    return TemporalKernel(family=TemporalFamily.EXPONENTIAL, scale=1.0, decay=1.0)


@pytest.fixture
def periodic_kernel() -> TemporalKernel:
    """Return the periodic exponential kernel used for river-flow data."""
    return TemporalKernel(
        family=TemporalFamily.PERIODIC_EXPONENTIAL, scale=2e3, decay=5.0, frequency=1.0 / 12.0
    )


@pytest.fixture
def unit_realization(exponential_kernel: TemporalKernel) -> TemporalRealization:
    """Return the exact realization of the unit exponential kernel."""
    return realize(factorize(exponential_kernel))


def _random_kernel(rng: np.random.Generator) -> SeparableKernel:
    if rng.random() < 0.5:
        spatial = SpatialKernel(
            family=SpatialFamily.EXPONENTIAL, length_scale=float(rng.uniform(1.0, 3.0))
        )
    else:
        spatial = SpatialKernel(
            family=SpatialFamily.SQUARED_EXPONENTIAL, length_scale=float(rng.uniform(0.5, 1.5))
        )
    if rng.random() < 0.5:
        temporal = TemporalKernel(
            family=TemporalFamily.EXPONENTIAL,
            scale=float(rng.uniform(0.5, 2.0)),
            decay=float(rng.uniform(0.5, 3.0)),
        )
    else:
        temporal = TemporalKernel(
            family=TemporalFamily.PERIODIC_EXPONENTIAL,
            scale=float(rng.uniform(0.5, 2.0)),
            decay=float(rng.uniform(0.5, 3.0)),
            frequency=float(rng.uniform(0.0, 0.3)),
        )
    return SeparableKernel(spatial=spatial, temporal=temporal)


def _random_points(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    """Well separated random locations: a jittered, shuffled lattice."""
    if dimension == 1:
        lattice = np.arange(8, dtype=float).reshape(-1, 1) * 1.5
    else:
        xx, yy = np.meshgrid(np.arange(3) * 1.5, np.arange(3) * 1.5, indexing="ij")
        lattice = np.column_stack([xx.ravel(), yy.ravel()])
    chosen = lattice[rng.permutation(lattice.shape[0])[:count]]
    return chosen + rng.uniform(-0.3, 0.3, size=chosen.shape)


def make_instance(
    rng: np.random.Generator,
    max_locations: int = 6,
    max_batches: int = 15,
    dimension: int = 1,
    query_count: int = 3,
) -> Instance:
    """Random kernel, locations, non-uniform schedule and varying active subsets."""
    kernel = _random_kernel(rng)
    count = int(rng.integers(1, max_locations + 1))
    points = _random_points(rng, count, dimension)
    model = StateSpaceModel(
        realize(factorize(kernel.temporal)), build_location_set(points, kernel.spatial)
    )

    steps = int(rng.integers(1, max_batches + 1))
    times = np.cumsum(rng.uniform(0.05, 1.0, size=steps))
    batches = []
    records: dict[str, list[Any]] = {"locations": [], "times": [], "values": [], "noise": []}
    for t in times:
        size = int(rng.integers(1, count + 1))
        active = sorted(rng.choice(count, size=size, replace=False).tolist())
        values = rng.normal(size=size)
        noise = rng.uniform(0.05, 0.5, size=size)
        batches.append(MeasurementBatch.create(t, active, values, noise))
        for i, index in enumerate(active):
            records["locations"].append(points[index])
            records["times"].append(t)
            records["values"].append(values[i])
            records["noise"].append(noise[i])
    dataset = Dataset(
        locations=np.asarray(records["locations"]).reshape(-1, dimension),
        times=np.asarray(records["times"]),
        values=np.asarray(records["values"]),
        noise=np.asarray(records["noise"]),
    )
    queries = _random_points(rng, query_count, dimension) + 0.7
    return Instance(kernel=kernel, model=model, batches=batches, dataset=dataset, queries=queries)


@pytest.fixture
def instance_factory() -> Callable[..., Instance]:
    """Return the random instance builder."""
    return make_instance
