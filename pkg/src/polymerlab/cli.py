import json
import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress
from rich.table import Table

from polymerlab.experiments.harness import ProgressHook
from polymerlab.lab import Lab
from polymerlab.models.error import OrderViolationRecord, PolymerLabError
from polymerlab.models.report import ExperimentReport

app = typer.Typer(help="Simulate pinned directed polymers and check the theorems about their dynamics")

console = Console()
err_console = Console(stderr=True)

ERROR_EXIT_CODE = 3

FORMAT = "%(message)s"
logging.basicConfig(
    level=logging.INFO,
    format=FORMAT,
    datefmt="[%X]",
    handlers=[RichHandler(console=err_console)],
)
logger = logging.getLogger(__name__)


@contextmanager
def progress_hook() -> Iterator[ProgressHook]:
    """Rich progress bars on stderr, one task per fan-out"""
    with Progress(console=err_console, transient=True) as progress:

        def add(description: str, total: int) -> Callable[[], None]:
            task = progress.add_task(f"[green]{description}...", total=total)
            return lambda: progress.advance(task, 1)

        yield add


def finish(report: ExperimentReport, report_path: Path) -> None:
    """Show the findings on stderr, print the verdict line on stdout and exit with the verdict's code"""
    err_console.print(report.metrics_table())
    if report.violations:
        err_console.print(OrderViolationRecord.convert_list_to_table(report.violations))
        err_console.print(f"{len(report.violations)} order violations were recorded, see {report_path}")
    for control in report.controls:
        state = "[green]degraded[/green]" if control.degraded else "[yellow]did not degrade[/yellow]"
        err_console.print(f"control {control.name}: {state} ({control.observed})")
    typer.echo(report.headline(str(report_path)))
    raise typer.Exit(code=report.verdict.exit_code)


def fail(ex: Exception) -> typer.Exit:
    if isinstance(ex, PolymerLabError | ValidationError | ValueError):
        logger.error(str(ex))
    else:
        logger.error(f"Run aborted by {type(ex).__name__}: {ex}")
    return typer.Exit(code=ERROR_EXIT_CODE)


@app.command()
def run(
    config: Annotated[Path, typer.Argument(help="JSON run config")],
    output_dir: Annotated[Path | None, typer.Option(help="Root directory for run directories")] = None,
    dump_trajectories: Annotated[
        bool,
        typer.Option(help="Write full-resolution trajectory dumps and Gibbs sample files into the run directory"),
    ] = False,
    verbose: Annotated[bool, typer.Option(help="Log per-step details")] = False,
):
    """
    Run the experiment named in a config.
    Exits with 0 on pass, 1 on fail, 2 if inconclusive and 3 on config or runtime errors
    """
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        run_config = Lab.load_config(config)
        if dump_trajectories:
            run_config = run_config.with_dumps()
        with progress_hook() as progress:
            report, report_path = Lab(progress=progress).run(run_config, output_dir=output_dir)
    except typer.Exit:
        raise
    except Exception as ex:
        raise fail(ex) from ex
    finish(report, report_path)


@app.command(name="list")
def list_experiments(
    as_json: Annotated[bool, typer.Option("--json", help="Print machine-readable JSON")] = False,
):
    """List the available experiments with the theorem each checks and its config keys"""
    experiments = Lab.list_experiments()
    if as_json:
        typer.echo(json.dumps(experiments, indent=2))
        return
    table = Table(title="Experiments")
    table.add_column("Name", justify="left", style="cyan", no_wrap=True)
    table.add_column("Theorem", justify="left", style="magenta")
    table.add_column("Checks", justify="left")
    table.add_column("Config keys", justify="left", style="blue")
    table.add_column("Seeds", justify="right")
    for experiment in experiments:
        table.add_row(
            experiment["name"],
            experiment["theorem"],
            experiment["summary"],
            ", ".join(experiment["config_keys"]),
            str(experiment["default_seed_count"]),
        )
    console.print(table)


@app.command()
def replay(
    report: Annotated[Path, typer.Argument(help="report.json written by run")],
    seeds_extend: Annotated[int, typer.Option(min=0, help="Add this many seeds and merge them into a new report")] = 0,
    verbose: Annotated[bool, typer.Option(help="Log per-step details")] = False,
):
    """
    Re-execute a report from its embedded config and verify that its metrics reproduce bitwise
    """
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        original = Lab.load_report(report)
        with progress_hook() as progress:
            replayed, report_path = Lab(progress=progress).replay(report, seeds_extend=seeds_extend)
    except typer.Exit:
        raise
    except Exception as ex:
        raise fail(ex) from ex
    err_console.print(ExperimentReport.convert_list_to_table([original, replayed]))
    finish(replayed, report_path)
