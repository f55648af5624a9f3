"""
Reading and writing datasets, scenarios, trajectories and result tables.

Datasets are CSV files with header ``t,x1[,x2],y,sigma`` where ``sigma`` is
the noise standard deviation. Scenarios add an ``is_new`` column. Floats are
written with 17 significant digits so every value reads back bit-exact.
"""

import csv
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ValidationError

from kalman_gp.adaptive import Visit
from kalman_gp.baseline import Dataset
from kalman_gp.config import FLOAT_DIGITS, ConfigError
from kalman_gp.errors import InputError
from kalman_gp.models import SummaryRecord, SweepRecord, TrajectoryRecord
from kalman_gp.spectral import SpectralFactor

PathLike = Union[str, Path]


class DatasetError(ConfigError):
    """Exception raised for malformed dataset or scenario files."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def format_float(value: float) -> str:
    """Round-trip exact decimal representation."""
    return format(float(value), f".{FLOAT_DIGITS}g")


def _location_columns(dimension: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dimension)]


def write_dataset(path: PathLike, dataset: Dataset) -> None:
    """Write a dataset as ``t,x1[,x2],y,sigma``."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", *_location_columns(dataset.dimension), "y", "sigma"])
        for k in range(dataset.size):
            writer.writerow(
                [
                    format_float(dataset.times[k]),
                    *(format_float(v) for v in dataset.locations[k]),
                    format_float(dataset.values[k]),
                    format_float(np.sqrt(dataset.noise[k])),
                ]
            )


def _read_rows(
    path: PathLike, extra: Sequence[str] = ()
) -> tuple[int, list[tuple[int, list[float]]]]:
    """Parse a numeric CSV; returns the location dimension and (line, values) rows."""
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None:
                raise DatasetError("file is empty", line=1)
            header = [h.strip() for h in header]
            dimension = len(header) - 3 - len(extra)
            expected = ["t", *_location_columns(max(dimension, 0)), "y", "sigma", *extra]
            if dimension not in (1, 2) or header != expected:
                raise DatasetError(
                    f"expected header {','.join(expected)}, got {','.join(header)}", line=1
                )
            rows = []
            for number, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise DatasetError(
                        f"expected {len(header)} fields, got {len(row)}", line=number
                    )
                try:
                    values = [float(cell) for cell in row]
                except ValueError as e:
                    raise DatasetError(f"non-numeric field ({e})", line=number) from e
                if not all(np.isfinite(values)):
                    raise DatasetError("non-finite field", line=number)
                if values[dimension + 2] <= 0.0:
                    raise DatasetError("sigma must be positive", line=number)
                rows.append((number, values))
    except FileNotFoundError as e:
        raise DatasetError(f"file not found: {path}") from e
    except OSError as e:
        raise DatasetError(f"failed to read {path}: {e}") from e
    return dimension, rows


def read_dataset(path: PathLike) -> Dataset:
    """
    Read a dataset CSV.

    Raises:
        DatasetError: For schema violations, with the offending line number
    """
    dimension, rows = _read_rows(path)
    table = np.asarray([values for _, values in rows], dtype=float).reshape(-1, dimension + 3)
    try:
        return Dataset(
            locations=table[:, 1 : 1 + dimension],
            times=table[:, 0],
            values=table[:, 1 + dimension],
            noise=table[:, 2 + dimension] ** 2,
        )
    except InputError as e:
        raise DatasetError(str(e)) from e


def write_scenario(path: PathLike, visits: Iterable[Visit], new_flags: Iterable[bool]) -> None:
    """Write visits as ``t,x1[,x2],y,sigma,is_new``."""
    items = list(visits)
    flags = list(new_flags)
    dimension = len(items[0].point) if items else 1
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", *_location_columns(dimension), "y", "sigma", "is_new"])
        for visit, is_new in zip(items, flags):
            writer.writerow(
                [
                    format_float(visit.time),
                    *(format_float(v) for v in visit.point),
                    format_float(visit.value),
                    format_float(np.sqrt(visit.noise)),
                    int(is_new),
                ]
            )


def read_scenario(path: PathLike) -> list[Visit]:
    """
    Read a scenario CSV into visits sorted by time.

    ``is_new`` is informational; whether a location is new is decided by the
    regressor from its current location set.

    Raises:
        DatasetError: For schema violations or time stamps going backwards
    """
    dimension, rows = _read_rows(path, extra=("is_new",))
    visits = []
    previous = -np.inf
    for number, values in rows:
        if values[-1] not in (0.0, 1.0):
            raise DatasetError("is_new must be 0 or 1", line=number)
        if values[0] < previous:
            raise DatasetError("scenario times must be non-decreasing", line=number)
        previous = values[0]
        visits.append(
            Visit.create(
                values[0],
                values[1 : 1 + dimension],
                values[1 + dimension],
                values[2 + dimension] ** 2,
            )
        )
    return visits


def read_points(path: PathLike) -> NDArray[np.float64]:
    """
    Read query points, one location per row, optionally with an ``x1[,x2]`` header.

    Raises:
        DatasetError: For malformed rows
    """
    points = []
    try:
        with open(path, newline="") as f:
            for number, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                if number == 1 and row[0].strip().startswith("x"):
                    continue
                try:
                    points.append([float(cell) for cell in row])
                except ValueError as e:
                    raise DatasetError(f"non-numeric coordinate ({e})", line=number) from e
    except OSError as e:
        raise DatasetError(f"failed to read {path}: {e}") from e
    if len({len(p) for p in points}) > 1:
        raise DatasetError("query points have inconsistent dimensions")
    return np.asarray(points, dtype=float)


def write_trajectory(path: PathLike, records: Iterable[TrajectoryRecord]) -> None:
    """Write records as JSON lines."""
    with open(path, "w") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")


def read_trajectory(path: PathLike) -> list[TrajectoryRecord]:
    """
    Read a JSON-lines trajectory.

    Raises:
        DatasetError: For malformed lines
    """
    records = []
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(TrajectoryRecord.model_validate_json(line))
            except ValidationError as e:
                raise DatasetError(f"invalid trajectory record: {e}", line=number) from e
    return records


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def write_table(path: PathLike, rows: Sequence[BaseModel], columns: Sequence[str]) -> None:
    """Write flat records as CSV with the given columns."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            data = row.model_dump()
            writer.writerow([_cell(data.get(column)) for column in columns])


SUMMARY_COLUMNS = [
    "label",
    "mode",
    "steps",
    "final_time",
    "fit",
    "holdout_fit",
    "nll",
    "mean_step_seconds",
    "max_step_seconds",
]


def write_summary(path: PathLike, summaries: Sequence[SummaryRecord]) -> None:
    """Write ``summary.csv``."""
    write_table(path, summaries, SUMMARY_COLUMNS)


def read_summary(path: PathLike) -> list[SummaryRecord]:
    """
    Read ``summary.csv``.

    Raises:
        DatasetError: For malformed rows
    """
    summaries = []
    with open(path, newline="") as f:
        for number, row in enumerate(csv.DictReader(f), start=2):
            cleaned = {k: (v if v != "" else None) for k, v in row.items()}
            try:
                summaries.append(SummaryRecord.model_validate(cleaned))
            except ValidationError as e:
                raise DatasetError(f"invalid summary row: {e}", line=number) from e
    return summaries


def write_sweep(path: PathLike, records: Sequence[SweepRecord]) -> None:
    """Write ``sweep.csv``: one row per grid point with its parameters spelled out."""
    names = sorted({name for record in records for name in record.parameters})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", *names, "nll", "status", "message"])
        for record in records:
            writer.writerow(
                [
                    record.index,
                    *(_cell(record.parameters.get(name)) for name in names),
                    _cell(record.nll),
                    record.status.value,
                    record.message or "",
                ]
            )


def write_factor(path: PathLike, factor: SpectralFactor) -> None:
    """Write a spectral factor as JSON."""
    Path(path).write_text(factor.model_dump_json(indent=2) + "\n")


def read_factor(path: PathLike) -> SpectralFactor:
    """Read a spectral factor written by ``write_factor``."""
    return SpectralFactor.model_validate(json.loads(Path(path).read_text()))
