"""
kvifflab Command-Line Interface

Subcommands:
    run        run an experiment from a JSON config and write result files
    validate   run the numerical certification checks
    scenarios  list the built-in scenarios as TSV

Exit codes: 0 success, 1 configuration error (or a failed check),
2 runtime error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table
from rich.text import Text

from ..config.experiment import load_config
from ..config.settings import settings
from ..core.errors import ConfigError, KviffLabError
from ..core.models import SCENARIO_NAMES, describe_scenario
from ..harness.experiment import ExperimentSummary, run_experiment
from ..harness.output import write_outputs
from ..harness.validation import CHECKS, CheckResult, run_validation


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class CLIInterface:
    """Rich console output for the kvifflab commands"""

    def __init__(self, stdout=None, stderr=None):
        color_system = "auto" if settings.cli_colors_enabled else None
        self.console = Console(file=stdout, color_system=color_system, highlight=False)
        self.error_console = Console(file=stderr, stderr=stderr is None, color_system=color_system,
                                     highlight=False)

    def show_message(self, message: str, title: str = "Message", style: str = "info"):
        """Print a titled panel; errors go to standard error

        Args:
            message: Message to display
            title: Title for the message panel
            style: Style type (info, success, warning, error)
        """
        style_map = {
            "info": "blue",
            "success": "green",
            "warning": "yellow",
            "error": "red",
        }
        border_style = style_map.get(style, style_map["info"])
        panel = Panel(
            Text(message),
            title=f"[bold {border_style}]{title}[/bold {border_style}]",
            border_style=border_style,
            padding=(0, 1),
        )
        (self.error_console if style == "error" else self.console).print(panel)

    def progress(self) -> Progress:
        return Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            console=self.console,
            disable=not self.console.is_terminal,
        )

    def show_summary(self, summary: ExperimentSummary):
        config = summary.config
        table = Table(title=f"{config.scenario}  N={config.num_particles}  repeats={config.repeats}")
        table.add_column("method", style="bold")
        table.add_column("median aggregate L2", justify="right")
        table.add_column("mean of median curve", justify="right")
        table.add_column("median wall time [s]", justify="right")
        for label, method in summary.methods.items():
            table.add_row(label, f"{method.median_aggregate:.4f}", f"{method.median_curve_mean:.4f}",
                          f"{method.median_wall_time:.2f}")
        self.console.print(table)

    def show_checks(self, results: Sequence[CheckResult]):
        table = Table(title="Validation")
        table.add_column("check", style="bold")
        table.add_column("result")
        table.add_column("detail")
        for result in results:
            verdict = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
            table.add_row(result.name, verdict, result.detail)
        self.console.print(table)


def cmd_run(ui: CLIInterface, config_path: Optional[str], overrides: Sequence[str] = (),
            seed: Optional[int] = None, out: Optional[str] = None) -> int:
    if not config_path:
        ui.show_message("run needs --config <path>", "Configuration error", "error")
        return EXIT_CONFIG
    if seed is not None:
        overrides = [*overrides, f"base_seed={seed}"]
    try:
        config = load_config(config_path, overrides)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        ui.show_message(str(e), "Configuration error", "error")
        return EXIT_CONFIG

    if out is not None:
        config.output_dir = Path(out)

    try:
        with ui.progress() as progress:
            task = progress.add_task(f"{config.scenario} trials", total=config.repeats)
            summary = run_experiment(
                config, progress=lambda done, total: progress.update(task, completed=done)
            )
        written = write_outputs(summary, config.output_dir, plot=config.plot)
    except (KviffLabError, OSError) as e:
        logger.error(f"Run failed: {e}")
        ui.show_message(str(e), "Run failed", "error")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        ui.show_message(f"Unexpected error: {e}", "Run failed", "error")
        return EXIT_RUNTIME

    ui.show_summary(summary)
    ui.console.print(f"Wrote {len(written)} files to {config.output_dir}")
    return EXIT_OK


def cmd_validate(ui: CLIInterface, checks: Optional[Sequence[str]] = None) -> int:
    try:
        results = run_validation(checks)
    except Exception as e:
        logger.exception(f"Validation crashed: {e}")
        ui.show_message(str(e), "Validation failed", "error")
        return EXIT_RUNTIME

    ui.show_checks(results)
    failed = [r.name for r in results if not r.passed]
    if failed:
        ui.show_message(f"Failed checks: {', '.join(failed)}", "Validation failed", "error")
        return EXIT_CONFIG
    return EXIT_OK


def cmd_scenarios(stream=None) -> int:
    """Print one TSV row per scenario: name, d, m, K, dt, mismatch"""
    stream = stream or sys.stdout
    stream.write("name\td\tm\tK\tdt\tmismatch\n")
    for name in SCENARIO_NAMES:
        info = describe_scenario(name)
        stream.write(f"{info.name}\t{info.dim_x}\t{info.dim_y}\t{info.horizon}\t{info.dt:g}\t{info.mismatch}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvifflab",
        description="Kernel variational inference flow filter experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", help="path to the experiment JSON file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted-path override, e.g. kviff.epsilon=5e-5 (repeatable)")
    run.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
    run.add_argument("--out", help="output directory (overrides output_dir)")

    validate = sub.add_parser("validate", help="run the numerical certification checks")
    validate.add_argument("--check", dest="checks", action="append", choices=sorted(CHECKS),
                          help="run only this check (repeatable)")

    sub.add_parser("scenarios", help="list built-in scenarios as TSV")
    return parser


def main(argv: Optional[List[str]] = None, ui: Optional[CLIInterface] = None) -> int:
    args = build_parser().parse_args(argv)
    ui = ui or CLIInterface()
    logger.info(f"Command: {args.command}")

    if args.command == "run":
        return cmd_run(ui, args.config, args.overrides, args.seed, args.out)
    if args.command == "validate":
        return cmd_validate(ui, args.checks)
    return cmd_scenarios(ui.console.file)
