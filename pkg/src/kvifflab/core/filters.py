"""
Filters Module

Kalman filter, bootstrap particle filter, stochastic ensemble Kalman filter
and the kernel variational inference flow filter (KVIFF) behind one
run_filter() entry point.

KVIFF follows the usual predict/update cycle; its update freezes the
prediction particles (samples of q), weights them by normalized likelihood
ratios, and moves a second cloud (initialized raw, or by a PF/EnKF update)
along the KVIF direction with explicit synchronous Euler steps.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, UsageError
from .kernel import KernelSpec, as_particles, kvif_directions
from .models import (
    ScenarioSpec,
    StateSpaceModel,
    TruthRun,
    log_likelihoods,
    sample_noise_batch,
)
from ..utils.linalg import solve_psd, symmetrize


logger = logging.getLogger(__name__)


@dataclass
class Ensemble:
    particles: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.particles = as_particles(self.particles)
        if not np.all(np.isfinite(self.particles)):
            raise UsageError(f"ensemble at step {self.step} has non-finite particles")

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


@dataclass
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if self.covariance.shape != (self.mean.shape[0],) * 2:
            raise UsageError(f"covariance shape {self.covariance.shape} does not match mean")


class Initializer(str, Enum):
    RAW = "raw"
    PF = "pf"
    ENKF = "enkf"


@dataclass
class KvifConfig:
    """KVIFF update settings

    Attributes:
        kernel: kernel used by the flow
        step_size: Euler step epsilon
        num_steps: number of inner flow steps N_s
        initializer: where the flow cloud starts (raw prediction, PF or EnKF update)
    """

    kernel: KernelSpec = field(default_factory=KernelSpec)
    step_size: float = 1e-3
    num_steps: int = 50
    initializer: Initializer = Initializer.PF

    def __post_init__(self):
        self.initializer = Initializer(self.initializer)
        if self.num_steps < 0:
            raise UsageError(f"num_steps must be non-negative, got {self.num_steps}")
        if self.num_steps > 0 and not self.step_size > 0:
            raise UsageError(f"step_size must be positive, got {self.step_size}")


METHODS = ("kf", "pf", "enkf", "kviff")


# ---------------------------------------------------------------------------
# Shared particle operations
# ---------------------------------------------------------------------------

def predict(model: StateSpaceModel, ensemble: Ensemble, rng: np.random.Generator) -> Ensemble:
    """Propagate every particle through f_k plus a draw of the assumed process noise"""
    if ensemble.dim != model.dim_x:
        raise UsageError(f"ensemble dimension {ensemble.dim} does not match model dimension {model.dim_x}")
    moved = model.transition(ensemble.step, ensemble.particles)
    noise = sample_noise_batch(model.process_noise, rng, ensemble.size)
    return Ensemble(particles=moved + noise, step=ensemble.step + 1)


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Unnormalized exp(l - max l); all-(-inf) or NaN inputs give all ones"""
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights)
    if not np.isfinite(top) or np.any(np.isnan(log_weights)):
        logger.warning("Degenerate likelihood for every particle, falling back to uniform weights")
        return np.ones_like(log_weights)
    return np.exp(log_weights - top)


def likelihood_scale(model: StateSpaceModel, ensemble: Ensemble, y_effective) -> np.ndarray:
    """exp(log p(y | x_i) - max_j log p(y | x_j)), shared by weights and ratios"""
    return normalize_log_weights(log_likelihoods(model, ensemble.step, y_effective, ensemble.particles))


def normalized_weights(model: StateSpaceModel, ensemble: Ensemble, y_effective) -> np.ndarray:
    """Importance weights p(y | x_i) normalized to sum to one (log-sum-exp stabilized)"""
    scaled = likelihood_scale(model, ensemble, y_effective)
    return scaled / scaled.sum()


def likelihood_ratios(model: StateSpaceModel, ensemble: Ensemble, y_effective) -> np.ndarray:
    """Q_j = Q~(x_j) / C_Q with C_Q the ensemble mean of Q~, computed in the log domain

    Equal to N * normalized_weights; uniform likelihoods give exactly 1.0.
    """
    scaled = likelihood_scale(model, ensemble, y_effective)
    return scaled / scaled.mean()


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def systematic_indices(weights, offset: float) -> np.ndarray:
    """Systematic resampling indices for positions offset + i/N, offset in [0, 1/N)"""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    if n < 1:
        raise UsageError("cannot resample an empty weight vector")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise UsageError("weights must be finite and non-negative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise UsageError(f"weights must sum to 1, got {weights.sum():.12g}")
    if not 0.0 <= offset < 1.0 / n:
        raise UsageError(f"offset must lie in [0, 1/N), got {offset}")

    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    positions = offset + np.arange(n) / n
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    n = np.asarray(weights).shape[0]
    if n < 1:
        raise UsageError("cannot resample an empty weight vector")
    return systematic_indices(weights, rng.uniform(0.0, 1.0 / n))


def resample(ensemble: Ensemble, weights, rng: np.random.Generator) -> Ensemble:
    indices = systematic_resample(weights, rng)
    return Ensemble(particles=ensemble.particles[indices], step=ensemble.step)


def pf_update(model: StateSpaceModel, ensemble: Ensemble, y_effective,
              rng: np.random.Generator) -> Ensemble:
    """Bootstrap update: weight by the likelihood, resample systematically"""
    weights = normalized_weights(model, ensemble, y_effective)
    logger.debug(f"PF step {ensemble.step}: ESS {effective_sample_size(weights):.1f}/{ensemble.size}")
    return resample(ensemble, weights, rng)


def enkf_update(model: StateSpaceModel, ensemble: Ensemble, y_effective,
                rng: np.random.Generator) -> Ensemble:
    """Stochastic EnKF update with perturbed observations and ensemble cross-covariances"""
    n = ensemble.size
    if n < 2:
        raise UsageError("the EnKF needs at least two ensemble members")
    noise = model.measurement_noise
    x = ensemble.particles
    z = model.predicted_observation(ensemble.step, x) + noise.mean

    x_dev = x - x.mean(axis=0)
    z_dev = z - z.mean(axis=0)
    cross = x_dev.T @ z_dev / (n - 1)
    innovation_cov = z_dev.T @ z_dev / (n - 1) + noise.covariance

    perturbations = rng.standard_normal((n, model.dim_y)) @ noise.factor.T
    innovations = np.asarray(y_effective, dtype=float) + perturbations - z
    gain_t = solve_psd(innovation_cov, cross.T)
    return Ensemble(particles=x + innovations @ gain_t, step=ensemble.step)


def estimate(ensemble: Ensemble) -> np.ndarray:
    return ensemble.particles.mean(axis=0)


def ensemble_spread(particles: np.ndarray) -> float:
    """Root mean per-coordinate variance"""
    if particles.shape[0] < 2:
        return 0.0
    return float(np.sqrt(np.mean(np.var(particles, axis=0, ddof=1))))


# ---------------------------------------------------------------------------
# Kalman filter
# ---------------------------------------------------------------------------

def kf_predict(belief: GaussianBelief, A, Q, offset=None) -> GaussianBelief:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    mean = A @ belief.mean
    if offset is not None:
        mean = mean + offset
    return GaussianBelief(mean=mean, covariance=symmetrize(A @ belief.covariance @ A.T + np.asarray(Q, dtype=float)))


def kf_update(belief: GaussianBelief, H, R, y) -> GaussianBelief:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sigma = belief.covariance
    innovation_cov = H @ sigma @ H.T + R
    gain = solve_psd(innovation_cov, H @ sigma).T
    mean = belief.mean + gain @ (y - H @ belief.mean)
    covariance = (np.eye(sigma.shape[0]) - gain @ H) @ sigma
    return GaussianBelief(mean=mean, covariance=symmetrize(covariance))


# ---------------------------------------------------------------------------
# KVIFF
# ---------------------------------------------------------------------------

def kvif_flow(kernel: KernelSpec, prediction_particles: np.ndarray, ratios: np.ndarray,
              start: np.ndarray, step_size: float, num_steps: int,
              callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Inner KVIF loop: move `start` for num_steps synchronous Euler steps

    The prediction particles and their ratios stay frozen; every step
    evaluates the direction at the previous iterate for all particles
    before any particle moves.

    Raises:
        DivergenceError: if a step produces non-finite particles
    """
    x = np.array(start, dtype=float, copy=True)
    for tau in range(1, num_steps + 1):
        x = x + step_size * kvif_directions(kernel, prediction_particles, ratios, x, x)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(tau, step_size)
        if callback is not None:
            callback(tau, x)
    return x


def kvif_update(model: StateSpaceModel, prediction_ensemble: Ensemble, y_effective,
                config: KvifConfig, rng: np.random.Generator,
                scaled: Optional[np.ndarray] = None) -> Ensemble:
    """KVIFF update stage for one time step

    `scaled` is likelihood_scale() of the prediction when the caller already has it.
    """
    if scaled is None:
        scaled = likelihood_scale(model, prediction_ensemble, y_effective)
    ratios = scaled / scaled.mean()

    if config.initializer is Initializer.PF:
        start = resample(prediction_ensemble, scaled / scaled.sum(), rng).particles
    elif config.initializer is Initializer.ENKF:
        start = enkf_update(model, prediction_ensemble, y_effective, rng).particles
    else:
        start = prediction_ensemble.particles.copy()

    if config.num_steps == 0:
        return Ensemble(particles=start, step=prediction_ensemble.step)

    kernel = config.kernel.resolve(prediction_ensemble.particles)
    moved = kvif_flow(kernel, prediction_ensemble.particles, ratios, start,
                      config.step_size, config.num_steps)
    return Ensemble(particles=moved, step=prediction_ensemble.step)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

@dataclass
class FilterResult:
    method: str
    estimates: np.ndarray
    spreads: np.ndarray
    ess: Optional[np.ndarray] = None


def _run_kalman(scenario: ScenarioSpec, y_effective: np.ndarray) -> FilterResult:
    model = scenario.model
    if not model.is_linear:
        raise UsageError(f"the Kalman filter needs a linear model; {scenario.name} is nonlinear")
    belief = GaussianBelief(scenario.init_ensemble.mean, scenario.init_ensemble.covariance)
    estimates = np.empty((scenario.horizon, model.dim_x))
    spreads = np.empty(scenario.horizon)
    for k in range(scenario.horizon):
        belief = kf_predict(belief, model.transition_matrix, model.process_noise.covariance,
                            offset=model.process_noise.mean)
        belief = kf_update(belief, model.measurement_matrix, model.measurement_noise.covariance,
                           y_effective[k] - model.measurement_noise.mean)
        estimates[k] = belief.mean
        spreads[k] = np.sqrt(max(np.trace(belief.covariance), 0.0) / model.dim_x)
    return FilterResult(method="kf", estimates=estimates, spreads=spreads)


def needs_two_particles(method: str, config: Optional[KvifConfig] = None) -> bool:
    """True for methods that use the ensemble covariance (enkf, kviff started by enkf)"""
    if method == "enkf":
        return True
    return method == "kviff" and config is not None and config.initializer is Initializer.ENKF


def run_filter(scenario: ScenarioSpec, method: str, params: Optional[KvifConfig],
               truth: TruthRun, seed: int, num_particles: int = 100) -> FilterResult:
    """Filter truth.observations with one method

    Randomness comes from SeedSequence(seed).spawn(K + 1): child 0 draws the
    initial ensemble, child k drives prediction and update at step k.

    Args:
        method: one of kf, pf, enkf, kviff
        params: KVIFF settings (defaults used when None); ignored by other methods
        num_particles: ensemble size N

    Returns:
        FilterResult with K estimates, per-step spreads and, for the weighted
        methods (pf, kviff), the per-step ESS of the prediction weights; enkf
        steps carry NaN
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    model = scenario.model
    y_effective = truth.effective_observations(model)
    if method == "kf":
        return _run_kalman(scenario, y_effective)
    config = params if params is not None else KvifConfig()
    if num_particles < 1 or (num_particles < 2 and needs_two_particles(method, config)):
        raise UsageError(f"{method} cannot run with {num_particles} particles")

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(scenario.horizon + 1)]
    ensemble = Ensemble(
        particles=sample_noise_batch(scenario.init_ensemble.as_noise(), streams[0], num_particles),
        step=0,
    )

    estimates = np.empty((scenario.horizon, model.dim_x))
    spreads = np.empty(scenario.horizon)
    ess = np.full(scenario.horizon, np.nan)
    for k in range(1, scenario.horizon + 1):
        rng = streams[k]
        prediction = predict(model, ensemble, rng)
        y = y_effective[k - 1]
        if method == "enkf":
            ensemble = enkf_update(model, prediction, y, rng)
        else:
            scaled = likelihood_scale(model, prediction, y)
            weights = scaled / scaled.sum()
            ess[k - 1] = effective_sample_size(weights)
            if method == "pf":
                ensemble = resample(prediction, weights, rng)
            else:
                ensemble = kvif_update(model, prediction, y, config, rng, scaled=scaled)
        estimates[k - 1] = estimate(ensemble)
        spreads[k - 1] = ensemble_spread(ensemble.particles)

    logger.debug(f"{method} on {scenario.name}: final spread {spreads[-1]:.4g}")
    return FilterResult(method=method, estimates=estimates, spreads=spreads, ess=ess)
