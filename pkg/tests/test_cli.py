#!/usr/bin/env python3
"""
Command-line tests: exit codes, scenario listing and result files
"""

import io
import sys
from pathlib import Path

import pytest

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kvifflab.core.errors import ExperimentError, NumericalError
from src.kvifflab.harness import validation
from src.kvifflab.harness.validation import CheckResult
from src.kvifflab.ui import cli
from src.kvifflab.ui.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, CLIInterface, main

CUBIC2D = str(Path(__file__).resolve().parent.parent / "configs" / "cubic2d.json")


@pytest.fixture
def ui():
    return CLIInterface(stdout=io.StringIO(), stderr=io.StringIO())


def _small_run(tmp_path, *extra):
    args = ["run", "--config", CUBIC2D, "--out", str(tmp_path / "out"),
            "--set", "repeats=1", "--set", "num_particles=10",
            "--set", "kviff.num_steps=2", "--set", "plot=false"]
    return args + list(extra)


def test_scenarios_tsv(ui):
    assert main(["scenarios"], ui=ui) == EXIT_OK
    lines = ui.console.file.getvalue().splitlines()
    assert lines[0] == "name\td\tm\tK\tdt\tmismatch"
    rows = {line.split("\t")[0]: line.split("\t") for line in lines[1:]}
    assert len(rows) == 8
    assert rows["linear10d"][1:4] == ["10", "10", "100"]
    assert rows["cubic2d"][1:4] == ["2", "2", "200"]
    assert rows["multitarget"][1:3] == ["8", "25"]


def test_run_without_config(ui):
    assert main(["run"], ui=ui) == EXIT_CONFIG
    assert "--config" in ui.error_console.file.getvalue()


def test_run_missing_config_file(ui, tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.json")], ui=ui) == EXIT_CONFIG


def test_run_bad_override(ui, tmp_path):
    assert main(_small_run(tmp_path, "--set", "num_particles=0"), ui=ui) == EXIT_CONFIG
    assert "num_particles" in ui.error_console.file.getvalue()


def test_run_writes_results(ui, tmp_path):
    assert main(_small_run(tmp_path, "--seed", "3"), ui=ui) == EXIT_OK
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["aggregate.csv", "diagnostics.csv", "runs.csv", "summary.csv"]
    runs = (out / "runs.csv").read_text().splitlines()
    assert len(runs) == 1 + 3 * 200
    assert runs[1].startswith("pf,0,1,")


def test_run_runtime_failure(ui, tmp_path, monkeypatch):
    def fail(config, progress=None):
        raise ExperimentError(0, 3, NumericalError("singular"))

    monkeypatch.setattr(cli, "run_experiment", fail)
    assert main(_small_run(tmp_path), ui=ui) == EXIT_RUNTIME
    assert "seed 3" in ui.error_console.file.getvalue()


def test_run_seed_sets_base_seed(ui, tmp_path, monkeypatch):
    seen = []

    def capture(config, progress=None):
        seen.append(config.base_seed)
        raise ExperimentError(0, config.base_seed, NumericalError("stop"))

    monkeypatch.setattr(cli, "run_experiment", capture)
    assert main(_small_run(tmp_path, "--seed", "7"), ui=ui) == EXIT_RUNTIME
    assert seen == [7]


def test_run_negative_seed_is_config_error(ui, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_experiment", lambda config, progress=None: pytest.fail("run started"))
    assert main(_small_run(tmp_path, "--seed", "-1"), ui=ui) == EXIT_CONFIG
    assert "base_seed" in ui.error_console.file.getvalue()


def test_validate_selected_check(ui):
    assert main(["validate", "--check", "kernel_gradient"], ui=ui) == EXIT_OK
    assert ui.error_console.file.getvalue() == ""


def test_validate_failed_check(ui, monkeypatch):
    monkeypatch.setitem(validation.CHECKS, "kernel_gradient",
                        lambda: CheckResult("kernel_gradient", False, "sabotaged"))
    assert main(["validate", "--check", "kernel_gradient"], ui=ui) == EXIT_CONFIG


def test_usage_errors_exit_two(ui):
    with pytest.raises(SystemExit) as excinfo:
        main(["validate", "--check", "no_such_check"], ui=ui)
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit) as excinfo:
        main([], ui=ui)
    assert excinfo.value.code == 2
