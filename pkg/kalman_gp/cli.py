"""
Command-line interface for kalman-gp.

This module provides the ``kalman-gp`` command: synthetic data generation,
streaming filter / adaptive / baseline runs, hyperparameter sweeps, rational
spectral approximation and fit comparison tables.
"""

import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from kalman_gp import __version__, config, dataio, runner
from kalman_gp.baseline import Dataset
from kalman_gp.errors import InputError, NumericalError
from kalman_gp.models import ExperimentConfig, Mode, SummaryRecord, SweepRecord
from kalman_gp.spectral import approximate_psd

# Create Typer app
app = typer.Typer(
    name="kalman-gp",
    help="Streaming spatio-temporal Gaussian process regression with Kalman filters",
    add_completion=True,
)

# Create console for rich output
console = Console()

# Exit codes
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONFIG_OPTION = typer.Option(
    ..., "--config", "-c", exists=True, dir_okay=False, help="Experiment configuration (JSON)"
)
SEED_OPTION = typer.Option(None, "--seed", "-s", min=0, help="Override the configured seed")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Override the output directory")


def _setup_logging(verbose: bool) -> None:
    logger = logging.getLogger("kalman_gp")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=Console(stderr=True), show_path=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)


def _show_version(value: bool) -> None:
    if value:
        console.print(f"kalman-gp version: {__version__}")
        raise typer.Exit()


@app.callback()
def global_options(
    version: bool = typer.Option(  # noqa: ARG001
        False,
        "--version",
        "-v",
        is_eager=True,
        callback=_show_version,
        help="Show version and exit",
    ),
    verbose: bool = typer.Option(False, "--verbose", "-V", help="Log debug detail"),
) -> None:
    """Set global options for all commands."""
    _setup_logging(verbose)


def _load(
    path: Path,
    seed: Optional[int],
    out: Optional[Path],
    mode: Optional[Mode] = None,
    queries: Optional[Path] = None,
) -> ExperimentConfig:
    loaded = config.load_config(path)
    return config.apply_overrides(
        loaded,
        seed=seed,
        out=out,
        mode=mode.value if mode is not None else None,
        query_points=dataio.read_points(queries).tolist() if queries is not None else None,
    )


def _fmt(value: Optional[float], digits: int = 6) -> str:
    return "-" if value is None else f"{value:.{digits}g}"


def _summary_table(title: str, summaries: list[SummaryRecord]) -> Table:
    table = Table(title=title)
    table.add_column("Label", style="cyan")
    table.add_column("Mode")
    table.add_column("Steps", justify="right")
    table.add_column("Final t", justify="right")
    table.add_column("Fit %", justify="right")
    table.add_column("Held-out fit %", justify="right")
    table.add_column("NLL", justify="right")
    table.add_column("Mean step [ms]", justify="right")
    table.add_column("Max step [ms]", justify="right")

    for summary in summaries:
        table.add_row(
            summary.label,
            summary.mode.value,
            str(summary.steps),
            _fmt(summary.final_time),
            _fmt(summary.fit, 8),
            _fmt(summary.holdout_fit, 8),
            _fmt(summary.nll, 10),
            _fmt(summary.mean_step_seconds * 1e3, 4),
            _fmt(summary.max_step_seconds * 1e3, 4),
        )
    return table


def _sweep_table(records: list[SweepRecord]) -> Table:
    names = sorted({name for record in records for name in record.parameters})
    table = Table(title="NLL sweep")
    table.add_column("#", style="dim", justify="right")
    for name in names:
        table.add_column(name, justify="right")
    table.add_column("NLL", justify="right")
    table.add_column("Status")

    for record in records:
        status = record.status.value
        table.add_row(
            str(record.index),
            *(_fmt(record.parameters.get(name)) for name in names),
            _fmt(record.nll, 10),
            status if record.message is None else f"[red]{status}[/red]",
        )
    return table


def _run_sweep(experiment: ExperimentConfig, dataset: Dataset, directory: Path) -> None:
    with console.status(f"Sweeping {len(runner.sweep_points(experiment))} grid points..."):
        records = runner.run_sweep(experiment, dataset)

    path = directory / config.SWEEP_FILE
    dataio.write_sweep(path, records)
    console.print(_sweep_table(records))

    best = runner.best_sweep_point(records)
    if best is None:
        console.print("[yellow]Every grid point failed[/yellow]")
    else:
        console.print(f"[green]Minimum NLL {best.nll:.10g} at[/green] {best.parameters}")
    console.print(f"[blue]Wrote[/blue] {path}")


@app.command("generate")
def generate(
    config_path: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """
    Generate a synthetic dataset.

    In adaptive mode a patrol scenario is written instead, one visit per step
    over the configured candidate locations.
    """
    try:
        experiment = _load(config_path, seed, out)
        directory = config.resolve_output_dir(experiment)

        if experiment.mode is Mode.ADAPTIVE:
            with console.status("Simulating patrol scenario..."):
                visits, flags = runner.generate_scenario(experiment)
            path = directory / config.SCENARIO_FILE
            dataio.write_scenario(path, visits, flags)
            console.print(
                f"[green]Wrote {len(visits)} visits ({sum(flags)} new locations) to[/green] {path}"
            )
            return

        with console.status("Sampling the prior..."):
            dataset = runner.generate_dataset(experiment)
        path = directory / experiment.outputs.dataset
        dataio.write_dataset(path, dataset)
        if dataset.size == 0:
            console.print(f"[yellow]Schedule horizon is empty; wrote no rows to {path}[/yellow]")
        else:
            console.print(f"[green]Wrote {dataset.size} measurements to[/green] {path}")
    except dataio.DatasetError as e:
        console.print(f"[red]Dataset error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except config.ConfigError as e:
        console.print(f"[red]Configuration error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except InputError as e:
        console.print(f"[red]Invalid input: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except NumericalError as e:
        console.print(f"[red]Numerical failure: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_NUMERICAL) from e
    except Exception as e:
        console.print(f"[red]Unexpected error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


@app.command("run")
def run(
    config_path: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    mode: Optional[Mode] = typer.Option(None, "--mode", "-m", help="Override the configured mode"),
    data: Optional[Path] = typer.Option(
        None, "--data", "-d", help="Dataset or scenario CSV (default: from the output directory)"
    ),
    queries: Optional[Path] = typer.Option(
        None,
        "--queries",
        "-q",
        exists=True,
        dir_okay=False,
        help="CSV of off-grid query points, added to the configured ones",
    ),
) -> None:
    """
    Run the filter, adaptive regressor, baseline or sweep on generated data.

    Writes the trajectory as JSON lines, a summary CSV with fit and per-step
    timing, and the resolved configuration for reproduction.
    """
    try:
        experiment = _load(config_path, seed, out, mode, queries)
        directory = config.resolve_output_dir(experiment)

        if experiment.mode is Mode.ADAPTIVE:
            visits = dataio.read_scenario(data or directory / config.SCENARIO_FILE)
            with console.status(f"Replaying {len(visits)} visits..."):
                result = runner.run_adaptive_scenario(experiment, visits)
        else:
            dataset = dataio.read_dataset(data or directory / experiment.outputs.dataset)
            if experiment.mode is Mode.SWEEP:
                _run_sweep(experiment, dataset, directory)
                config.save_config(experiment, directory / config.RUN_METADATA_FILE)
                return
            if experiment.mode is Mode.BASELINE:
                with console.status("Running the batch GP baseline..."):
                    result = runner.run_baseline(experiment, dataset)
            else:
                with console.status(f"Filtering {len(dataset.step_times)} batches..."):
                    result = runner.run_filter(experiment, dataset)

        trajectory = directory / experiment.outputs.trajectory
        summary = directory / experiment.outputs.summary
        dataio.write_trajectory(trajectory, result.records)
        dataio.write_summary(summary, [result.summary] if result.summary else [])
        config.save_config(experiment, directory / config.RUN_METADATA_FILE)

        if result.summary is not None:
            console.print(_summary_table("Run summary", [result.summary]))
        console.print(f"[blue]Wrote[/blue] {trajectory} [blue]and[/blue] {summary}")
    except dataio.DatasetError as e:
        console.print(f"[red]Dataset error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except config.ConfigError as e:
        console.print(f"[red]Configuration error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except InputError as e:
        console.print(f"[red]Invalid input: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except NumericalError as e:
        console.print(f"[red]Numerical failure: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_NUMERICAL) from e
    except Exception as e:
        console.print(f"[red]Unexpected error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


@app.command("sweep")
def sweep(
    config_path: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = typer.Option(
        None, "--data", "-d", help="Dataset CSV (default: the one in the output directory)"
    ),
) -> None:
    """
    Evaluate the streamed negative log-likelihood over a hyperparameter grid.

    Grid points run concurrently; a failing point is reported in its row and
    does not stop the sweep.
    """
    try:
        experiment = _load(config_path, seed, out, Mode.SWEEP)
        directory = config.resolve_output_dir(experiment)
        dataset = dataio.read_dataset(data or directory / experiment.outputs.dataset)
        _run_sweep(experiment, dataset, directory)
    except dataio.DatasetError as e:
        console.print(f"[red]Dataset error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except config.ConfigError as e:
        console.print(f"[red]Configuration error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except InputError as e:
        console.print(f"[red]Invalid input: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except NumericalError as e:
        console.print(f"[red]Numerical failure: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_NUMERICAL) from e
    except Exception as e:
        console.print(f"[red]Unexpected error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


@app.command("approx-psd")
def approx_psd(
    config_path: Path = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    order: Optional[int] = typer.Option(
        None, "--order", "-r", min=1, help="Model order (default: realization.order)"
    ),
) -> None:
    """Fit a stable rational spectral factor to the configured temporal kernel."""
    try:
        experiment = _load(config_path, seed, out)
        directory = config.resolve_output_dir(experiment)
        settings = experiment.realization
        order = order or settings.order

        with console.status(f"Fitting an order-{order} spectral factor..."):
            factor = approximate_psd(
                experiment.kernel.temporal,
                order,
                frequency_grid=runner.frequency_grid(experiment),
                rng=config.substream(experiment.seed, "optimizer"),
                restarts=settings.restarts,
            )

        table = Table(title=f"Spectral factor (order {factor.order})")
        table.add_column("k", style="dim", justify="right")
        table.add_column("Numerator b_k", justify="right")
        table.add_column("Denominator a_k", justify="right")
        for k in range(factor.order):
            table.add_row(str(k), f"{factor.numerator[k]:.10g}", f"{factor.denominator[k]:.10g}")
        console.print(table)
        console.print(f"Objective: {_fmt(factor.objective, 10)}  Hurwitz: {factor.is_hurwitz()}")

        path = directory / config.FACTOR_FILE
        dataio.write_factor(path, factor)
        console.print(f"[blue]Wrote[/blue] {path}")
    except dataio.DatasetError as e:
        console.print(f"[red]Dataset error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except config.ConfigError as e:
        console.print(f"[red]Configuration error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except InputError as e:
        console.print(f"[red]Invalid input: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except NumericalError as e:
        console.print(f"[red]Numerical failure: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_NUMERICAL) from e
    except Exception as e:
        console.print(f"[red]Unexpected error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


@app.command("compare")
def compare(
    summaries: list[Path] = typer.Argument(
        ..., exists=True, dir_okay=False, help="summary.csv files to compare"
    ),
    config_path: Optional[Path] = typer.Option(
        None, "--config", "-c", exists=True, dir_okay=False, help="Experiment configuration"
    ),
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Tabulate fit and timing across several runs and write compare.csv."""
    try:
        rows: list[SummaryRecord] = []
        for path in summaries:
            for summary in dataio.read_summary(path):
                if len(summaries) > 1:
                    summary.label = f"{path.parent.name}/{summary.label}"
                rows.append(summary)

        if not rows:
            console.print("[yellow]No summary rows found[/yellow]")
            return

        console.print(_summary_table("Fit comparison", rows))

        if config_path is not None:
            directory = config.resolve_output_dir(_load(config_path, seed, out))
        else:
            directory = out or config.DEFAULT_OUTPUT_DIR
            directory.mkdir(parents=True, exist_ok=True)
        path = directory / config.COMPARE_FILE
        dataio.write_summary(path, rows)
        console.print(f"[blue]Wrote[/blue] {path}")
    except config.ConfigError as e:
        console.print(f"[red]Configuration error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_CONFIG) from e
    except Exception as e:
        console.print(f"[red]Unexpected error: {str(e)}[/red]")
        raise typer.Exit(code=EXIT_UNEXPECTED) from e


if __name__ == "__main__":
    app()
