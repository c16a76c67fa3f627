"""
Models Module

State-space models x_{k+1} = f_k(x_k) + w_k, y_k = h_k(x_k) + v_k, the noise
laws used both by the filters (assumed, always Gaussian) and by the truth
simulator (possibly mismatched: biased, correlated, Cauchy or log-normal),
the benchmark scenario builders, and ground-truth simulation.

Transition and measurement callables are vectorized: they accept a single
state of shape (d,) or a stack of states of shape (N, d).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import linalg

from .errors import UnsupportedNoiseError, UsageError
from ..utils.linalg import cholesky_with_jitter, psd_factor


logger = logging.getLogger(__name__)

StateMap = Callable[[int, np.ndarray], np.ndarray]


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    CAUCHY = "cauchy"
    LOGNORMAL = "lognormal"


def _as_covariance(covariance, dim: int) -> np.ndarray:
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim == 0:
        return float(cov) * np.eye(dim)
    if cov.ndim == 1:
        return np.diag(cov)
    return cov


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """A noise law; build with NoiseSpec.gaussian / .cauchy / .lognormal

    Cauchy and log-normal laws are i.i.d. per dimension.
    """

    kind: NoiseKind
    dim: int
    mean: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    location: Optional[np.ndarray] = None
    scale: float = 1.0
    log_mean: float = 0.0
    log_std: float = 1.0

    @classmethod
    def gaussian(cls, mean, covariance) -> "NoiseSpec":
        """Gaussian noise; covariance may be a scalar (times I), a diagonal or a full matrix"""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = _as_covariance(covariance, mean.shape[0])
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise UsageError(f"covariance shape {cov.shape} does not match mean of length {mean.shape[0]}")
        spec = cls(kind=NoiseKind.GAUSSIAN, dim=mean.shape[0], mean=mean, covariance=cov)
        spec.factor  # validates PSD eagerly
        return spec

    @classmethod
    def cauchy(cls, dim: int, scale: float, location=0.0) -> "NoiseSpec":
        if scale <= 0:
            raise UsageError(f"Cauchy scale must be positive, got {scale}")
        location = np.broadcast_to(np.asarray(location, dtype=float), (dim,)).copy()
        return cls(kind=NoiseKind.CAUCHY, dim=dim, location=location, scale=float(scale))

    @classmethod
    def lognormal(cls, dim: int, log_mean: float, log_std: float) -> "NoiseSpec":
        if log_std <= 0:
            raise UsageError(f"log-normal log_std must be positive, got {log_std}")
        return cls(kind=NoiseKind.LOGNORMAL, dim=dim, log_mean=float(log_mean), log_std=float(log_std))

    @property
    def is_gaussian(self) -> bool:
        return self.kind is NoiseKind.GAUSSIAN

    @cached_property
    def factor(self) -> np.ndarray:
        """L with L @ L.T == covariance (Gaussian only)"""
        if not self.is_gaussian:
            raise UnsupportedNoiseError(f"{self.kind.value} noise has no covariance factor")
        return psd_factor(self.covariance)

    @cached_property
    def precision_factor(self) -> np.ndarray:
        """Cholesky factor used for likelihood evaluation (jittered when singular)"""
        if not self.is_gaussian:
            raise UnsupportedNoiseError(
                f"likelihoods are only defined for Gaussian noise, not {self.kind.value}"
            )
        factor, _ = cholesky_with_jitter(self.covariance)
        return factor

    def describe(self) -> str:
        if self.is_gaussian:
            return f"gaussian(mean={_short(self.mean)}, cov diag={_short(np.diag(self.covariance))})"
        if self.kind is NoiseKind.CAUCHY:
            return f"cauchy(scale={self.scale:.4g})"
        return f"lognormal(log_mean={self.log_mean:.4g}, log_std={self.log_std:.4g})"


def _short(vector: np.ndarray) -> str:
    values = np.unique(np.round(vector, 6))
    return f"{values[0]:g}" if values.size == 1 else "[" + ", ".join(f"{v:g}" for v in vector) + "]"


def sample_noise_batch(noise: NoiseSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw `size` independent noise vectors, shape (size, dim)"""
    if noise.is_gaussian:
        z = rng.standard_normal((size, noise.dim))
        return noise.mean + z @ noise.factor.T
    if noise.kind is NoiseKind.CAUCHY:
        u = rng.random((size, noise.dim))
        return noise.location + noise.scale * np.tan(np.pi * (u - 0.5))
    z = rng.standard_normal((size, noise.dim))
    return np.exp(noise.log_mean + noise.log_std * z)


def sample_noise(noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    return sample_noise_batch(noise, rng, 1)[0]


@dataclass(eq=False)
class StateSpaceModel:
    """The filter's view of the system

    For cumulative observation models (cubic sensor) `measurement` is the
    core h(x); the filters compare the increment y_k - y_{k-1} against
    observation_scale * h(x).
    """

    dim_x: int
    dim_y: int
    transition: StateMap
    measurement: StateMap
    process_noise: NoiseSpec
    measurement_noise: NoiseSpec
    cumulative_observation: bool = False
    observation_scale: float = 1.0
    transition_matrix: Optional[np.ndarray] = None
    measurement_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise UsageError("model dimensions must be positive")
        if self.process_noise.dim != self.dim_x or self.measurement_noise.dim != self.dim_y:
            raise UsageError("assumed noise dimensions do not match the model")
        if not (self.process_noise.is_gaussian and self.measurement_noise.is_gaussian):
            raise UnsupportedNoiseError("filter-assumed noise laws must be Gaussian")

    @property
    def is_linear(self) -> bool:
        return self.transition_matrix is not None and self.measurement_matrix is not None

    def predicted_observation(self, step: int, states: np.ndarray) -> np.ndarray:
        """Noise-free effective observation of state(s) at `step`"""
        z = self.measurement(step, states)
        return self.observation_scale * z if self.cumulative_observation else z


@dataclass(eq=False)
class InitialEnsemble:
    mean: np.ndarray
    covariance: np.ndarray

    def as_noise(self) -> NoiseSpec:
        return NoiseSpec.gaussian(self.mean, self.covariance)


@dataclass(eq=False)
class ScenarioSpec:
    """A model plus the data-generating laws, horizon and initialization of one experiment"""

    name: str
    model: StateSpaceModel
    data_process_noise: NoiseSpec
    data_measurement_noise: NoiseSpec
    dt: float
    horizon: int
    x0_truth: np.ndarray
    init_ensemble: InitialEnsemble
    data_transition: Optional[StateMap] = None
    description: str = ""

    def __post_init__(self):
        if self.horizon < 1:
            raise UsageError(f"horizon must be at least 1, got {self.horizon}")
        if self.dt <= 0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if self.data_process_noise.dim != self.model.dim_x:
            raise UsageError("data process noise dimension does not match the model")
        if self.data_measurement_noise.dim != self.model.dim_y:
            raise UsageError("data measurement noise dimension does not match the model")
        self.x0_truth = np.asarray(self.x0_truth, dtype=float)

    @property
    def truth_transition(self) -> StateMap:
        return self.data_transition or self.model.transition


@dataclass(eq=False)
class TruthRun:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    def effective_observations(self, model: StateSpaceModel) -> np.ndarray:
        """Observations as the filters consume them: increments for cumulative models"""
        if not model.cumulative_observation:
            return self.observations
        return np.diff(self.observations, axis=0, prepend=np.zeros((1, self.observations.shape[1])))


def simulate_truth(scenario: ScenarioSpec, seed: int) -> TruthRun:
    """Simulate states x_0..x_K and observations y_1..y_K with the data-generating laws"""
    rng = np.random.default_rng(seed)
    model = scenario.model
    f = scenario.truth_transition
    states = np.empty((scenario.horizon + 1, model.dim_x))
    observations = np.empty((scenario.horizon, model.dim_y))
    states[0] = scenario.x0_truth
    previous = np.zeros(model.dim_y)

    for k in range(scenario.horizon):
        states[k + 1] = f(k, states[k]) + sample_noise(scenario.data_process_noise, rng)
        core = model.measurement(k + 1, states[k + 1])
        v = sample_noise(scenario.data_measurement_noise, rng)
        if model.cumulative_observation:
            previous = previous + model.observation_scale * core + v
            observations[k] = previous
        else:
            observations[k] = core + v

    logger.debug(f"Simulated {scenario.name} truth with seed {seed}")
    return TruthRun(states=states, observations=observations, seed=seed)


def log_likelihoods(model: StateSpaceModel, step: int, y_effective, states) -> np.ndarray:
    """Gaussian log-density of y_effective given each row of `states`"""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    y = np.asarray(y_effective, dtype=float).reshape(-1)
    if states.shape[1] != model.dim_x or y.shape[0] != model.dim_y:
        raise UsageError(
            f"expected states of dim {model.dim_x} and observation of dim {model.dim_y}, "
            f"got {states.shape[1]} and {y.shape[0]}"
        )
    noise = model.measurement_noise
    factor = noise.precision_factor
    residuals = y - noise.mean - model.predicted_observation(step, states)
    whitened = linalg.solve_triangular(factor, residuals.T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    return -0.5 * (np.sum(whitened ** 2, axis=0) + log_det + model.dim_y * np.log(2.0 * np.pi))


def log_likelihood(model: StateSpaceModel, step: int, y_effective, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(log_likelihoods(model, step, y_effective, x)[0])


# ---------------------------------------------------------------------------
# Scenario builders
# ---------------------------------------------------------------------------

LINEAR_VARIANTS = ("nominal", "biased", "correlated")
CUBIC_VARIANTS = ("nominal", "cauchy", "lognormal_bias")
MULTI_TARGET_VARIANTS = ("nominal", "velocity_bias")

INIT_COVARIANCE = 0.1


def _check_variant(variant: str, allowed) -> str:
    if variant not in allowed:
        raise UsageError(f"unknown variant {variant!r}; expected one of {', '.join(allowed)}")
    return variant


def _initial(x0: np.ndarray) -> InitialEnsemble:
    return InitialEnsemble(mean=x0.copy(), covariance=INIT_COVARIANCE * np.eye(x0.shape[0]))


def linear10d_drift_matrix(dim: int = 10) -> np.ndarray:
    """a_ij = 0.1 if j = i + 1, -0.5 if i = j, else 0"""
    return -0.5 * np.eye(dim) + 0.1 * np.eye(dim, k=1)


def correlated_noise_matrix(dim: int = 10) -> np.ndarray:
    """Symmetrized (E + E^T)/2 of the upper-bidiagonal E with entries 0.3"""
    upper = 0.3 * np.eye(dim, k=1)
    return 0.5 * (upper + upper.T)


def build_linear10d(variant: str = "nominal") -> ScenarioSpec:
    _check_variant(variant, LINEAR_VARIANTS)
    dim, dt, horizon = 10, 0.1, 100
    drift = linear10d_drift_matrix(dim)
    transition_matrix = np.eye(dim) + dt * drift

    def transition(step, x):
        return x + dt * (x @ drift.T)

    def measurement(step, x):
        return np.array(x, dtype=float, copy=True)

    model = StateSpaceModel(
        dim_x=dim, dim_y=dim,
        transition=transition, measurement=measurement,
        process_noise=NoiseSpec.gaussian(np.zeros(dim), dt),
        measurement_noise=NoiseSpec.gaussian(np.zeros(dim), 0.1),
        transition_matrix=transition_matrix,
        measurement_matrix=np.eye(dim),
    )

    data_process = model.process_noise
    names = {"nominal": "linear10d", "biased": "linear10d-bias", "correlated": "linear10d-corr"}
    description = "none"
    if variant == "biased":
        data_process = NoiseSpec.gaussian(np.full(dim, 0.2), dt)
        description = "process noise mean 0.2 in data, 0 in filter"
    elif variant == "correlated":
        data_process = NoiseSpec.gaussian(np.zeros(dim), dt * (np.eye(dim) + correlated_noise_matrix(dim)))
        description = "correlated process noise dt(I+E_sym) in data, dt*I in filter"

    x0 = np.zeros(dim)
    return ScenarioSpec(
        name=names[variant], model=model,
        data_process_noise=data_process, data_measurement_noise=model.measurement_noise,
        dt=dt, horizon=horizon, x0_truth=x0, init_ensemble=_initial(x0),
        description=description,
    )


def build_cubic_sensor(dim: int = 2, variant: str = "nominal") -> ScenarioSpec:
    if dim < 1:
        raise UsageError(f"cubic sensor dimension must be positive, got {dim}")
    _check_variant(variant, CUBIC_VARIANTS)
    dt = 0.1
    horizon = 200 if dim == 2 else 100

    def transition(step, x):
        return x + dt * np.cos(x)

    def measurement(step, x):
        return np.asarray(x, dtype=float) ** 3

    model = StateSpaceModel(
        dim_x=dim, dim_y=dim,
        transition=transition, measurement=measurement,
        process_noise=NoiseSpec.gaussian(np.zeros(dim), dt),
        measurement_noise=NoiseSpec.gaussian(np.zeros(dim), dt),
        cumulative_observation=True, observation_scale=dt,
    )

    data_process = model.process_noise
    data_measurement = model.measurement_noise
    description = "none"
    if variant == "cauchy":
        data_measurement = NoiseSpec.cauchy(dim, scale=np.sqrt(dt))
        description = "Cauchy measurement noise in data, Gaussian in filter"
    elif variant == "lognormal_bias":
        data_measurement = NoiseSpec.lognormal(dim, log_mean=0.0, log_std=np.sqrt(dt))
        data_process = NoiseSpec.gaussian(np.full(dim, 0.3), dt)
        description = "log-normal measurement noise and process mean 0.3 in data"

    suffix = {"nominal": "", "cauchy": "-cauchy", "lognormal_bias": "-lognormal-bias"}[variant]
    x0 = np.zeros(dim)
    return ScenarioSpec(
        name=f"cubic{dim}d{suffix}", model=model,
        data_process_noise=data_process, data_measurement_noise=data_measurement,
        dt=dt, horizon=horizon, x0_truth=x0, init_ensemble=_initial(x0),
        description=description,
    )


NUM_TARGETS = 4
AMPLITUDE = 10.0
DISTANCE_FLOOR = 0.1


def sensor_grid(side: int = 5, extent: float = 4.0) -> np.ndarray:
    """side x side lattice over [-extent, extent]^2 including the boundary"""
    ticks = np.linspace(-extent, extent, side)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def hamiltonian_velocity(positions: np.ndarray) -> np.ndarray:
    """v(x) = (-sin x1 cos x2, cos x1 sin x2) for positions of shape (..., 2)"""
    x1, x2 = positions[..., 0], positions[..., 1]
    return np.stack([-np.sin(x1) * np.cos(x2), np.cos(x1) * np.sin(x2)], axis=-1)


def acoustic_amplitudes(states: np.ndarray, sensors: np.ndarray) -> np.ndarray:
    """y^j = sum_p A / (||x^(p) - xi_j|| + d0), for stacked states of shape (..., 2M)"""
    states = np.asarray(states, dtype=float)
    positions = states.reshape(states.shape[:-1] + (-1, 2))
    distances = np.linalg.norm(positions[..., :, None, :] - sensors, axis=-1)
    return np.sum(AMPLITUDE / (distances + DISTANCE_FLOOR), axis=-2)


def build_multi_target(variant: str = "nominal") -> ScenarioSpec:
    _check_variant(variant, MULTI_TARGET_VARIANTS)
    dt, horizon = 0.1, 100
    dim = 2 * NUM_TARGETS
    sensors = sensor_grid()

    def transition(step, x):
        x = np.asarray(x, dtype=float)
        positions = x.reshape(x.shape[:-1] + (NUM_TARGETS, 2))
        return x + dt * hamiltonian_velocity(positions).reshape(x.shape)

    def biased_transition(step, x):
        x = np.asarray(x, dtype=float)
        return transition(step, x) - x * dt / 5.0

    def measurement(step, x):
        return acoustic_amplitudes(x, sensors)

    model = StateSpaceModel(
        dim_x=dim, dim_y=sensors.shape[0],
        transition=transition, measurement=measurement,
        process_noise=NoiseSpec.gaussian(np.zeros(dim), 0.1 * dt),
        measurement_noise=NoiseSpec.gaussian(np.zeros(sensors.shape[0]), 0.01 * dt),
    )

    x0 = np.array([1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0])
    biased = variant == "velocity_bias"
    return ScenarioSpec(
        name="multitarget-bias" if biased else "multitarget", model=model,
        data_process_noise=model.process_noise, data_measurement_noise=model.measurement_noise,
        dt=dt, horizon=horizon, x0_truth=x0, init_ensemble=_initial(x0),
        data_transition=biased_transition if biased else None,
        description="data dynamics add -x*dt/5 per object" if biased else "none",
    )


SCENARIO_BUILDERS: Dict[str, Callable[[], ScenarioSpec]] = {
    "linear10d": lambda: build_linear10d("nominal"),
    "linear10d-bias": lambda: build_linear10d("biased"),
    "linear10d-corr": lambda: build_linear10d("correlated"),
    "cubic2d": lambda: build_cubic_sensor(2, "nominal"),
    "cubic10d-cauchy": lambda: build_cubic_sensor(10, "cauchy"),
    "cubic10d-lognormal-bias": lambda: build_cubic_sensor(10, "lognormal_bias"),
    "multitarget": lambda: build_multi_target("nominal"),
    "multitarget-bias": lambda: build_multi_target("velocity_bias"),
}

SCENARIO_NAMES: List[str] = list(SCENARIO_BUILDERS)
LINEAR_SCENARIOS = ("linear10d", "linear10d-bias", "linear10d-corr")


def build_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIO_BUILDERS[name]()
    except KeyError:
        raise UsageError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIO_NAMES)}") from None


@dataclass(frozen=True)
class ScenarioInfo:
    name: str
    dim_x: int
    dim_y: int
    horizon: int
    dt: float
    mismatch: str


def describe_scenario(name: str) -> ScenarioInfo:
    scenario = build_scenario(name)
    return ScenarioInfo(
        name=scenario.name, dim_x=scenario.model.dim_x, dim_y=scenario.model.dim_y,
        horizon=scenario.horizon, dt=scenario.dt, mismatch=scenario.description,
    )
