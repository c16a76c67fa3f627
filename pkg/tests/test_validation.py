#!/usr/bin/env python3
"""
Certification check tests
"""

import inspect
import sys
from pathlib import Path

import pytest

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kvifflab.config.settings import settings
from src.kvifflab.core.errors import NumericalError
from src.kvifflab.harness import validation
from src.kvifflab.harness.validation import (
    CHECKS,
    check_fixed_point,
    check_fokker_planck_convergence,
    check_fokker_planck_descent,
    check_kf_grid_agreement,
    check_particle_descent,
    run_validation,
)

slow = pytest.mark.skipif(not settings.run_slow, reason="set KVIFF_RUN_SLOW=true to run")


def test_check_registry():
    assert set(CHECKS) == {
        "fokker_planck_descent",
        "fokker_planck_convergence",
        "fixed_point",
        "kf_grid_agreement",
        "kernel_gradient",
        "particle_descent",
    }


def test_fixed_point_check_passes():
    result = check_fixed_point(nodes=401)
    assert result.passed, result.detail
    assert "identity=True" in result.detail


def test_kf_grid_agreement_passes():
    result = check_kf_grid_agreement()
    assert result.passed, result.detail


def test_density_descent_passes():
    result = check_fokker_planck_descent(nodes=401)
    assert result.passed, result.detail
    assert "increases=0" in result.detail


def test_density_convergence_stops_at_target():
    result = check_fokker_planck_convergence(nodes=401, t_max=0.5, factor=0.9)
    assert result.passed, result.detail
    reached = float(result.detail.split()[0][len("t="):])
    assert reached < 0.5


def test_density_convergence_fails_when_out_of_time():
    result = check_fokker_planck_convergence(nodes=401, t_max=0.5, factor=0.5)
    assert not result.passed
    assert result.detail.startswith("t=0.5 (limit 0.5)")


def test_default_convergence_horizon_covers_measured_decay():
    # L/L0 is still 0.0194 at t = 20 on the default grid
    default = inspect.signature(check_fokker_planck_convergence).parameters["t_max"].default
    assert default >= 40.0


def test_run_validation_selected_checks():
    results = run_validation(["kernel_gradient", "fixed_point"])
    assert [r.name for r in results] == ["kernel_gradient", "fixed_point"]
    assert all(r.passed for r in results)


def test_raising_check_counts_as_failure(monkeypatch):
    def broken():
        raise NumericalError("singular")

    monkeypatch.setitem(validation.CHECKS, "fixed_point", broken)
    [result] = run_validation(["fixed_point"])
    assert not result.passed
    assert "NumericalError" in result.detail


@slow
def test_density_flow_convergence():
    result = check_fokker_planck_convergence()
    assert result.passed, result.detail


@slow
def test_particle_descent_majority():
    result = check_particle_descent()
    assert result.passed, result.detail
