#!/usr/bin/env python3
"""
Model tests: noise laws, scenario builders, truth simulation and likelihoods
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

# Add repository root to path for imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kvifflab.core.errors import InvalidCovarianceError, UnsupportedNoiseError, UsageError
from src.kvifflab.core.models import (
    AMPLITUDE,
    DISTANCE_FLOOR,
    SCENARIO_NAMES,
    NoiseSpec,
    StateSpaceModel,
    acoustic_amplitudes,
    build_cubic_sensor,
    build_linear10d,
    build_multi_target,
    build_scenario,
    correlated_noise_matrix,
    describe_scenario,
    linear10d_drift_matrix,
    log_likelihood,
    log_likelihoods,
    sample_noise,
    sample_noise_batch,
    sensor_grid,
    simulate_truth,
)


def _noiseless(scenario):
    dim_x, dim_y = scenario.model.dim_x, scenario.model.dim_y
    return replace(
        scenario,
        data_process_noise=NoiseSpec.gaussian(np.zeros(dim_x), 0.0),
        data_measurement_noise=NoiseSpec.gaussian(np.zeros(dim_y), 0.0),
    )


# Noise laws

def test_zero_covariance_gaussian_returns_mean():
    noise = NoiseSpec.gaussian([1.5, -2.0], 0.0)
    draws = sample_noise_batch(noise, np.random.default_rng(0), 20)
    assert_array_equal(draws, np.tile([1.5, -2.0], (20, 1)))


def test_gaussian_sample_mean():
    noise = NoiseSpec.gaussian(np.zeros(2), np.eye(2))
    draws = sample_noise_batch(noise, np.random.default_rng(42), 1_000_000)
    assert np.all(np.abs(draws.mean(axis=0)) < 4e-3)


def test_lognormal_draws_are_positive():
    noise = NoiseSpec.lognormal(3, log_mean=0.0, log_std=np.sqrt(0.1))
    draws = sample_noise_batch(noise, np.random.default_rng(1), 1000)
    assert np.all(draws > 0)


def test_cauchy_median_is_location():
    noise = NoiseSpec.cauchy(2, scale=0.3, location=1.0)
    draws = sample_noise_batch(noise, np.random.default_rng(2), 200_000)
    assert_allclose(np.median(draws, axis=0), [1.0, 1.0], atol=0.01)


def test_single_draw_shape():
    noise = NoiseSpec.gaussian(np.zeros(4), 1.0)
    assert sample_noise(noise, np.random.default_rng(0)).shape == (4,)


def test_invalid_noise_parameters():
    with pytest.raises(InvalidCovarianceError):
        NoiseSpec.gaussian(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(InvalidCovarianceError):
        NoiseSpec.gaussian(np.zeros(2), [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(UsageError):
        NoiseSpec.cauchy(2, scale=0.0)
    with pytest.raises(UsageError):
        NoiseSpec.lognormal(2, log_mean=0.0, log_std=-1.0)


def test_filter_noise_must_be_gaussian():
    with pytest.raises(UnsupportedNoiseError):
        StateSpaceModel(
            dim_x=1, dim_y=1,
            transition=lambda k, x: x, measurement=lambda k, x: x,
            process_noise=NoiseSpec.gaussian([0.0], 1.0),
            measurement_noise=NoiseSpec.cauchy(1, scale=1.0),
        )


# Scenario builders

def test_linear10d_matrices():
    a = linear10d_drift_matrix()
    assert a[0, 1] == 0.1 and a[0, 0] == -0.5 and a[1, 0] == 0.0
    scenario = build_linear10d("nominal")
    assert scenario.horizon == 100 and scenario.dt == 0.1
    assert scenario.horizon * scenario.dt == pytest.approx(10.0)
    assert_allclose(scenario.model.process_noise.covariance, 0.1 * np.eye(10))
    assert_allclose(scenario.model.measurement_noise.covariance, 0.1 * np.eye(10))


def test_linear10d_biased_noise_mean():
    scenario = build_linear10d("biased")
    assert_allclose(scenario.data_process_noise.mean, np.full(10, 0.2))
    assert_allclose(scenario.model.process_noise.mean, np.zeros(10))


def test_correlated_covariance_is_positive_definite():
    scenario = build_linear10d("correlated")
    cov = scenario.data_process_noise.covariance
    assert_allclose(cov, cov.T)
    np.linalg.cholesky(cov)
    assert correlated_noise_matrix()[0, 1] == pytest.approx(0.15)


def test_linear_transition_matches_matrix():
    scenario = build_linear10d()
    x = np.random.default_rng(0).normal(size=(5, 10))
    assert_allclose(scenario.model.transition(0, x), x @ scenario.model.transition_matrix.T, rtol=1e-13, atol=1e-14)


def test_cubic_sensor_settings():
    two = build_cubic_sensor(2, "nominal")
    assert two.horizon == 200 and two.horizon * two.dt == pytest.approx(20.0)
    assert two.model.cumulative_observation
    assert_allclose(two.model.transition(0, np.zeros(2)), [0.1, 0.1])
    assert build_cubic_sensor(10, "cauchy").horizon == 100

    biased = build_cubic_sensor(10, "lognormal_bias")
    assert_allclose(biased.data_process_noise.mean, np.full(10, 0.3))
    assert_allclose(biased.model.process_noise.mean, np.zeros(10))
    with pytest.raises(UsageError):
        build_cubic_sensor(0)


def test_sensor_grid():
    sensors = sensor_grid()
    assert sensors.shape == (25, 2)
    assert sorted(set(sensors[:, 0])) == [-4.0, -2.0, 0.0, 2.0, 4.0]
    assert sorted(set(sensors[:, 1])) == [-4.0, -2.0, 0.0, 2.0, 4.0]


def test_acoustic_amplitude_at_sensor():
    sensors = sensor_grid()
    reading = acoustic_amplitudes(sensors[0], sensors)
    assert reading[0] == pytest.approx(AMPLITUDE / DISTANCE_FLOOR)
    assert reading[0] == pytest.approx(100.0)


def test_multi_target_layout():
    scenario = build_multi_target("nominal")
    assert scenario.model.dim_x == 8 and scenario.model.dim_y == 25
    assert_array_equal(scenario.x0_truth, [1, 0, 2, 0, 3, 0, 4, 0])
    assert scenario.data_transition is None


def test_multi_target_velocity_bias():
    scenario = build_multi_target("velocity_bias")
    x = np.random.default_rng(3).normal(size=8)
    expected = scenario.model.transition(0, x) - x * scenario.dt / 5.0
    assert_allclose(scenario.truth_transition(0, x), expected, rtol=1e-14)


def test_multi_target_hamiltonian_drift():
    scenario = build_multi_target("nominal")
    dt = scenario.dt
    x = np.array([0.5, 1.0, -1.2, 0.3, 2.0, -2.5, 0.1, 0.2])
    for k in range(100):
        nxt = scenario.model.transition(k, x)
        h_now = np.sin(x[0::2]) * np.sin(x[1::2])
        h_next = np.sin(nxt[0::2]) * np.sin(nxt[1::2])
        assert np.all(np.abs(h_next - h_now) <= dt ** 2)
        x = nxt


def test_scenario_registry():
    assert len(SCENARIO_NAMES) == 8
    for name in SCENARIO_NAMES:
        assert build_scenario(name).name == name
    with pytest.raises(UsageError):
        build_scenario("lorenz96")
    info = describe_scenario("linear10d")
    assert (info.dim_x, info.horizon) == (10, 100)
    assert describe_scenario("cubic2d").horizon == 200


# Truth simulation

def test_linear_noiseless_truth_stays_at_zero():
    truth = simulate_truth(_noiseless(build_linear10d()), seed=5)
    assert truth.states.shape == (101, 10) and truth.observations.shape == (100, 10)
    assert np.all(truth.states == 0.0)
    assert np.all(truth.observations == 0.0)


def test_noiseless_truth_follows_transition():
    scenario = _noiseless(build_multi_target("velocity_bias"))
    truth = simulate_truth(scenario, seed=0)
    for k in range(scenario.horizon):
        assert_allclose(truth.states[k + 1], scenario.truth_transition(k, truth.states[k]), rtol=0, atol=0)


def test_cubic_first_observation():
    truth = simulate_truth(_noiseless(build_cubic_sensor(2)), seed=0)
    assert_allclose(truth.states[1], [0.1, 0.1])
    assert_allclose(truth.observations[0], [1e-4, 1e-4], rtol=1e-12)


def test_truth_is_reproducible():
    scenario = build_cubic_sensor(10, "cauchy")
    a, b = simulate_truth(scenario, 17), simulate_truth(scenario, 17)
    assert_array_equal(a.states, b.states)
    assert_array_equal(a.observations, b.observations)
    assert not np.array_equal(a.observations, simulate_truth(scenario, 18).observations)


def test_cumulative_increments_resum():
    scenario = build_cubic_sensor(2)
    truth = simulate_truth(scenario, 4)
    increments = truth.effective_observations(scenario.model)
    assert_allclose(np.cumsum(increments, axis=0), truth.observations, rtol=1e-12, atol=1e-12)
    linear = build_linear10d()
    plain = simulate_truth(linear, 4)
    assert plain.effective_observations(linear.model) is plain.observations


# Likelihoods

def test_log_likelihood_at_mode():
    model = build_linear10d().model
    y = np.linspace(-1, 1, 10)
    expected = -5.0 * np.log(2 * np.pi * 0.1)
    assert log_likelihood(model, 1, y, y) == pytest.approx(expected, rel=1e-12)


def test_log_likelihood_symmetry_and_monotonicity():
    model = build_linear10d().model
    y = np.zeros(10)
    step = np.zeros(10)
    step[3] = 0.5
    assert log_likelihood(model, 1, y, step) == pytest.approx(log_likelihood(model, 1, y, -step), rel=1e-15)
    values = [log_likelihood(model, 1, y, s * step) for s in (0.0, 1.0, 2.0, 3.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_log_likelihoods_match_quadratic_form():
    rng = np.random.default_rng(8)
    root = rng.normal(size=(3, 3))
    cov = root @ root.T + 0.5 * np.eye(3)
    mean = np.array([0.1, -0.2, 0.3])
    model = StateSpaceModel(
        dim_x=2, dim_y=3,
        transition=lambda k, x: x,
        measurement=lambda k, x: np.stack([x[..., 0], x[..., 1], x[..., 0] * x[..., 1]], axis=-1),
        process_noise=NoiseSpec.gaussian(np.zeros(2), 1.0),
        measurement_noise=NoiseSpec.gaussian(mean, cov),
    )
    states = rng.normal(size=(6, 2))
    y = rng.normal(size=3)
    got = log_likelihoods(model, 1, y, states)
    _, logdet = np.linalg.slogdet(cov)
    for i, x in enumerate(states):
        r = y - mean - model.measurement(1, x)
        direct = -0.5 * (r @ np.linalg.solve(cov, r) + logdet + 3 * np.log(2 * np.pi))
        assert got[i] == pytest.approx(direct, rel=1e-12)


def test_cumulative_likelihood_compares_scaled_core():
    model = build_cubic_sensor(2).model
    x = np.array([1.0, -2.0])
    increment = 0.1 * x ** 3
    best = log_likelihood(model, 1, increment, x)
    assert best > log_likelihood(model, 1, increment + 0.05, x)
    with pytest.raises(UsageError):
        log_likelihood(model, 1, np.zeros(3), x)
