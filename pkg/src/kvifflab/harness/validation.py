"""
Certification Checks

Independent numerical checks run by `kvifflab.py validate`:

  fokker_planck_descent      loss never increases along the grid density flow
  fokker_planck_convergence  the same flow removes 99% of the loss before t = 60
  fixed_point                q = p gives zero velocity; uniform-likelihood KVIFF is the identity
  kf_grid_agreement          1D Kalman filter vs grid Bayes recursion
  kernel_gradient            kernel gradients vs central finite differences
  particle_descent           toy Bayes problem: MMD to the posterior decreases
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
from scipy.stats import norm

from ..config.settings import settings
from ..core.errors import KviffLabError
from ..core.filters import (
    Ensemble,
    GaussianBelief,
    Initializer,
    KvifConfig,
    kf_predict,
    kf_update,
    kvif_flow,
    kvif_update,
    normalize_log_weights,
)
from ..core.kernel import KernelSpec, kernel_eval, kernel_grad2
from ..core.models import NoiseSpec, StateSpaceModel
from ..core.oracle import (
    Grid1D,
    flow_velocity,
    fokker_planck_flow,
    fokker_planck_step,
    grid_bayes_update,
    grid_predict,
    mmd2_estimate,
    weighted_l2_loss,
)


logger = logging.getLogger(__name__)

DESCENT_TOLERANCE = 1e-10
CLIP_TOLERANCE = 1e-6
FIXED_POINT_TOLERANCE = 1e-12
KF_GRID_TOLERANCE = 1e-3
GRADIENT_TOLERANCE = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _density_pair(nodes: int):
    p = Grid1D.gaussian(0.0, 1.0, n=nodes)
    q0 = Grid1D.gaussian(1.0, 1.0, n=nodes)
    return p, q0


def check_fokker_planck_descent(nodes: Optional[int] = None, steps: int = 500,
                                dt_flow: float = 1e-3) -> CheckResult:
    p, q0 = _density_pair(nodes or settings.validate_grid_nodes)
    trace = fokker_planck_flow(KernelSpec(bandwidth=2.0), p, q0, dt_flow, steps)
    increases = int(np.sum(trace.deltas > DESCENT_TOLERANCE))
    passed = increases == 0 and trace.max_clipped < CLIP_TOLERANCE
    detail = (f"L0={trace.losses[0]:.6e} L{steps}={trace.losses[-1]:.6e} "
              f"max dL={trace.max_delta:.3e} increases={increases} "
              f"max clipped={trace.max_clipped:.3e}")
    return CheckResult("fokker_planck_descent", passed, detail)


def check_fokker_planck_convergence(nodes: Optional[int] = None, t_max: float = 60.0,
                                    dt_flow: float = 1e-3, factor: float = 0.01) -> CheckResult:
    """Run the density flow until L <= factor * L0, giving up at t_max"""
    p, q0 = _density_pair(nodes or settings.validate_grid_nodes)
    kernel = KernelSpec(bandwidth=2.0)
    initial = weighted_l2_loss(kernel, p, q0)
    steps = int(round(t_max / dt_flow))
    trace = fokker_planck_flow(kernel, p, q0, dt_flow, steps, stop_below=factor * initial)
    ratio = trace.losses[-1] / trace.losses[0]
    reached = (len(trace.losses) - 1) * dt_flow
    detail = (f"t={reached:g} (limit {t_max:g}): L/L0={ratio:.3e} (need <= {factor:g}), "
              f"max dL={trace.max_delta:.3e}")
    return CheckResult("fokker_planck_convergence", ratio <= factor, detail)


def _uniform_likelihood_model(dim: int) -> StateSpaceModel:
    return StateSpaceModel(
        dim_x=dim,
        dim_y=1,
        transition=lambda k, x: x,
        measurement=lambda k, x: np.zeros(np.shape(x)[:-1] + (1,)),
        process_noise=NoiseSpec.gaussian(np.zeros(dim), 0.1),
        measurement_noise=NoiseSpec.gaussian(np.zeros(1), 1.0),
    )


def check_fixed_point(nodes: Optional[int] = None, seed: int = 0) -> CheckResult:
    kernel = KernelSpec(bandwidth=2.0)
    p = Grid1D.gaussian(0.0, 1.0, n=nodes or settings.validate_grid_nodes)
    velocity = float(np.max(np.abs(flow_velocity(kernel, p, p))))
    moved = float(np.max(np.abs(fokker_planck_step(kernel, p, p, 1e-3).values - p.values)))

    rng = np.random.default_rng(seed)
    prediction = Ensemble(particles=rng.standard_normal((200, 3)), step=1)
    config = KvifConfig(kernel=KernelSpec(bandwidth=1.0), step_size=1e-2, num_steps=20,
                        initializer=Initializer.RAW)
    updated = kvif_update(_uniform_likelihood_model(3), prediction, np.array([0.7]), config, rng)
    identity = bool(np.array_equal(updated.particles, prediction.particles))

    passed = velocity <= FIXED_POINT_TOLERANCE and moved <= FIXED_POINT_TOLERANCE and identity
    detail = f"max|phi|={velocity:.3e} max|dq|={moved:.3e} particle identity={identity}"
    return CheckResult("fixed_point", passed, detail)


def check_kf_grid_agreement(nodes: Optional[int] = None, steps: int = 20, seed: int = 0,
                            a: float = 0.9, q: float = 0.5, r: float = 1.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal()
    observations = []
    for _ in range(steps):
        x = a * x + np.sqrt(q) * rng.standard_normal()
        observations.append(x + np.sqrt(r) * rng.standard_normal())

    belief = GaussianBelief(mean=[0.0], covariance=[[1.0]])
    grid = Grid1D.gaussian(0.0, 1.0, lo=-10.0, hi=10.0, n=nodes or settings.validate_grid_nodes)
    worst = 0.0
    for y in observations:
        belief = kf_update(kf_predict(belief, [[a]], [[q]]), [[1.0]], [[r]], [y])
        grid = grid_predict(grid, lambda s: a * s, q)
        grid = grid_bayes_update(grid, lambda s, y=y: norm.logpdf(y, loc=s, scale=np.sqrt(r)))
        worst = max(worst, abs(grid.mean() - float(belief.mean[0])))
    detail = f"{steps} steps, max |KF mean - grid mean| = {worst:.3e}"
    return CheckResult("kf_grid_agreement", worst <= KF_GRID_TOLERANCE, detail)


GradientFn = Callable[[KernelSpec, np.ndarray, np.ndarray], np.ndarray]


def check_kernel_gradient(grad_fn: GradientFn = kernel_grad2, dims: Iterable[int] = range(1, 11),
                          trials: int = 5, seed: int = 0, delta: float = 1e-5) -> CheckResult:
    """Compare grad_fn(spec, x, y) with central differences of k(x, .) at y"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dim in dims:
        spec = KernelSpec(bandwidth=float(dim))
        for _ in range(trials):
            x = rng.normal(scale=0.5, size=dim)
            y = x + rng.normal(scale=0.5, size=dim)
            analytic = np.asarray(grad_fn(spec, x, y), dtype=float)
            numeric = np.empty(dim)
            for i in range(dim):
                step = np.zeros(dim)
                step[i] = delta
                numeric[i] = (kernel_eval(spec, x, y + step) - kernel_eval(spec, x, y - step)) / (2 * delta)
            scale = max(float(np.linalg.norm(numeric)), 1e-8)
            worst = max(worst, float(np.linalg.norm(analytic - numeric)) / scale)
    detail = f"max relative error {worst:.3e} (tolerance {GRADIENT_TOLERANCE:g})"
    return CheckResult("kernel_gradient", worst <= GRADIENT_TOLERANCE, detail)


def toy_bayes_mmd(seed: int, num_particles: int = 500, num_steps: int = 50, step_size: float = 1e-2,
                  bandwidth: float = 1.0, posterior_samples: int = 5000, y: float = 1.0):
    """MMD^2 to the exact posterior before and after a KVIF flow

    Prior N(0, 1), likelihood N(y | x, 1), so the posterior is N(y/2, 1/2).
    """
    rng = np.random.default_rng(seed)
    kernel = KernelSpec(bandwidth=bandwidth)
    prediction = rng.standard_normal((num_particles, 1))
    scaled = normalize_log_weights(norm.logpdf(y, loc=prediction[:, 0], scale=1.0))
    ratios = scaled / scaled.mean()
    posterior = rng.normal(y / 2.0, np.sqrt(0.5), size=(posterior_samples, 1))

    before = mmd2_estimate(kernel, prediction, posterior)
    moved = kvif_flow(kernel, prediction, ratios, prediction, step_size, num_steps)
    after = mmd2_estimate(kernel, moved, posterior)
    return before, after


def check_particle_descent(seeds: int = 20, required: int = 18, **kwargs) -> CheckResult:
    decreases = 0
    for seed in range(seeds):
        before, after = toy_bayes_mmd(seed, **kwargs)
        decreases += after < before
    detail = f"MMD decreased in {decreases}/{seeds} seeds (need {required})"
    return CheckResult("particle_descent", decreases >= required, detail)


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "fokker_planck_descent": check_fokker_planck_descent,
    "fokker_planck_convergence": check_fokker_planck_convergence,
    "fixed_point": check_fixed_point,
    "kf_grid_agreement": check_kf_grid_agreement,
    "kernel_gradient": check_kernel_gradient,
    "particle_descent": check_particle_descent,
}


def run_validation(names: Optional[Iterable[str]] = None) -> List[CheckResult]:
    """Run the named checks (all by default); a check that raises counts as failed"""
    results = []
    for name in (list(names) if names else list(CHECKS)):
        check = CHECKS[name]
        logger.info(f"Running check {name}")
        try:
            result = check()
        except KviffLabError as e:
            logger.error(f"Check {name} raised: {e}")
            result = CheckResult(name, False, f"raised {type(e).__name__}: {e}")
        logger.info(f"{name}: {'PASS' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results
