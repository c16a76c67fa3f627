#!/usr/bin/env python3
"""
Oracle tests: grid Bayes recursion, weighted L2 loss, density flow and MMD
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import norm

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kvifflab.core.errors import DegenerateLikelihoodError, StepSizeError, UsageError
from src.kvifflab.core.kernel import KernelSpec
from src.kvifflab.core.oracle import (
    Grid1D,
    flow_velocity,
    fokker_planck_flow,
    fokker_planck_step,
    grid_bayes_update,
    grid_predict,
    mmd2_estimate,
    weighted_l2_loss,
)


# Grid Bayes

def test_flat_likelihood_returns_prior():
    prior = Grid1D.gaussian(0.3, 1.2)
    posterior = grid_bayes_update(prior, lambda x: np.zeros_like(x))
    assert_allclose(posterior.values, prior.values, rtol=1e-12)


def test_conjugate_gaussian_posterior():
    prior = Grid1D.gaussian(0.0, 1.0, n=4001)
    posterior = grid_bayes_update(prior, lambda x: norm.logpdf(1.0, loc=x, scale=1.0))
    assert posterior.mean() == pytest.approx(0.5, abs=1e-4)
    assert posterior.variance() == pytest.approx(0.5, abs=1e-4)
    assert posterior.mass() == pytest.approx(1.0, abs=1e-8)


def test_degenerate_likelihood():
    prior = Grid1D.gaussian(0.0, 1.0)
    with pytest.raises(DegenerateLikelihoodError):
        grid_bayes_update(prior, lambda x: np.full_like(x, -np.inf))


def test_huge_but_flat_log_likelihood_is_shifted():
    prior = Grid1D.gaussian(0.0, 1.0)
    posterior = grid_bayes_update(prior, lambda x: np.full_like(x, -1e5))
    assert_allclose(posterior.values, prior.values, rtol=1e-12)


def test_grid_predict_gaussian():
    prior = Grid1D.gaussian(0.0, 1.0)
    predicted = grid_predict(prior, lambda x: 0.9 * x, 0.5)
    assert predicted.mean() == pytest.approx(0.0, abs=1e-9)
    assert predicted.variance() == pytest.approx(0.81 + 0.5, abs=1e-6)
    with pytest.raises(UsageError):
        grid_predict(prior, lambda x: x, 0.0)


def test_grid_validation():
    with pytest.raises(UsageError):
        Grid1D(1.0, 1.0, np.ones(5))
    with pytest.raises(UsageError):
        Grid1D(0.0, 1.0, np.array([0.1, -0.1, 0.2]))
    with pytest.raises(UsageError):
        Grid1D(0.0, 1.0, np.array([1.0]))


# Weighted L2 loss

def test_loss_of_identical_densities_is_zero():
    p = Grid1D.gaussian(0.0, 1.0)
    assert weighted_l2_loss(KernelSpec(2.0), p, p) == 0.0


def test_loss_is_symmetric_and_non_negative():
    p, q = Grid1D.gaussian(0.0, 1.0), Grid1D.gaussian(1.0, 0.7)
    kernel = KernelSpec(2.0)
    forward, backward = weighted_l2_loss(kernel, p, q), weighted_l2_loss(kernel, q, p)
    assert forward == pytest.approx(backward, rel=1e-12)
    assert forward > 0.0


def test_loss_matches_naive_double_loop():
    n = 201
    p = Grid1D.gaussian(-1.0, 0.3, n=n)
    q = Grid1D.gaussian(1.0, 0.3, n=n)
    h = 0.5
    x, w = p.nodes, p.weights
    diff = p.values - q.values
    naive = 0.0
    for i in range(n):
        for j in range(n):
            naive += w[i] * diff[i] * math.exp(-(x[i] - x[j]) ** 2 / h) * w[j] * diff[j]
    assert weighted_l2_loss(KernelSpec(h), p, q) == pytest.approx(naive, rel=1e-10)


def test_loss_needs_same_grid():
    with pytest.raises(UsageError):
        weighted_l2_loss(KernelSpec(), Grid1D.gaussian(0, 1, n=101), Grid1D.gaussian(0, 1, n=201))


# Density flow

def test_velocity_vanishes_at_target():
    p = Grid1D.gaussian(0.0, 1.0)
    assert np.all(flow_velocity(KernelSpec(2.0), p, p) == 0.0)
    assert_array_equal(fokker_planck_step(KernelSpec(2.0), p, p, 1e-3).values, p.values)


def test_flow_conserves_mass_before_clipping():
    p, q0 = Grid1D.gaussian(0.0, 1.0), Grid1D.gaussian(1.0, 1.0)
    trace = fokker_planck_flow(KernelSpec(2.0), p, q0, 1e-3, 50)
    assert max(abs(d) for d in trace.mass_drift) <= 1e-8
    assert trace.final.mass() == pytest.approx(1.0, abs=1e-8)


def test_flow_loss_never_increases():
    p, q0 = Grid1D.gaussian(0.0, 1.0), Grid1D.gaussian(1.0, 1.0)
    trace = fokker_planck_flow(KernelSpec(2.0), p, q0, 1e-3, 500)
    assert len(trace.losses) == 501
    assert trace.max_delta <= 1e-10
    assert trace.max_clipped < 1e-6
    assert trace.losses[-1] < trace.losses[0]


def test_flow_stops_once_loss_is_low_enough():
    p, q0 = Grid1D.gaussian(0.0, 1.0), Grid1D.gaussian(1.0, 1.0)
    full = fokker_planck_flow(KernelSpec(2.0), p, q0, 1e-3, 500)
    target = 0.9 * full.losses[0]
    assert full.losses[-1] < target
    stopped = fokker_planck_flow(KernelSpec(2.0), p, q0, 1e-3, 500, stop_below=target)
    assert len(stopped.losses) < len(full.losses)
    assert stopped.losses[-1] <= target < stopped.losses[-2]
    assert_array_equal(stopped.losses, full.losses[:len(stopped.losses)])


def test_flow_moves_mean_toward_target():
    p, q0 = Grid1D.gaussian(0.0, 1.0), Grid1D.gaussian(1.0, 1.0)
    trace = fokker_planck_flow(KernelSpec(2.0), p, q0, 1e-2, 200)
    assert 0.0 < trace.final.mean() < q0.mean()


def test_instability_detector():
    p = Grid1D.gaussian(0.0, 1.0)
    q = Grid1D.from_density(-8.0, 8.0, 801, lambda x: 1.0 + 1e-5 * x)
    with pytest.raises(StepSizeError):
        fokker_planck_step(KernelSpec(2.0), p, q, 1.0)


def test_flow_rejects_bad_step():
    p = Grid1D.gaussian(0.0, 1.0)
    with pytest.raises(UsageError):
        fokker_planck_step(KernelSpec(), p, p, 0.0)
    with pytest.raises(UsageError):
        fokker_planck_flow(KernelSpec(), p, p, -1.0, 3)


# MMD

def test_mmd_of_identical_samples():
    xs = np.random.default_rng(0).normal(size=(30, 2))
    assert abs(mmd2_estimate(KernelSpec(1.0), xs, xs[::-1])) <= 1e-14


def test_mmd_symmetry():
    rng = np.random.default_rng(1)
    xs, ys = rng.normal(size=(20, 1)), rng.normal(0.5, size=(25, 1))
    kernel = KernelSpec(1.0)
    assert mmd2_estimate(kernel, xs, ys) == pytest.approx(mmd2_estimate(kernel, ys, xs), rel=1e-12)


def test_mmd_singletons_hand_value():
    value = mmd2_estimate(KernelSpec(1.0), [0.0], [1.0])
    assert value == pytest.approx(2.0 - 2.0 * math.exp(-1.0), rel=1e-15)
    assert value == pytest.approx(1.264241, abs=1e-6)


def test_mmd_needs_samples():
    with pytest.raises(UsageError):
        mmd2_estimate(KernelSpec(), [], [1.0])
