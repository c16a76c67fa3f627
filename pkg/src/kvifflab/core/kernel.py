"""
Kernel Module

RBF kernel evaluations, kernel gradients, and the particle flow directions
built from them: the kernel variational inference flow (KVIF) used by the
KVIFF update, and the Stein variational direction kept for diagnostics.

Gradients are taken with respect to the evaluation point (the second
argument), so for this translation-invariant kernel
kernel_grad2(x, y) == -kernel_grad2(y, x).
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import UsageError


logger = logging.getLogger(__name__)


class KernelFamily(str, Enum):
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel k(x, x') = exp(-||x - x'||^2 / bandwidth)

    Attributes:
        bandwidth: the h of the kernel, in squared state units
        family: kernel family (only RBF)
        median_heuristic: replace bandwidth by median(||x - x'||^2) / log(N + 1)
            of the particles passed to resolve()
    """

    bandwidth: float = 1.0
    family: KernelFamily = KernelFamily.RBF
    median_heuristic: bool = False

    def __post_init__(self):
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise UsageError(f"kernel bandwidth must be positive, got {self.bandwidth}")
        if KernelFamily(self.family) is not KernelFamily.RBF:
            raise UsageError(f"unsupported kernel family: {self.family}")

    def resolve(self, particles: np.ndarray) -> "KernelSpec":
        """Return the spec with a concrete bandwidth for this particle cloud"""
        if not self.median_heuristic:
            return self
        particles = as_particles(particles)
        n = particles.shape[0]
        if n < 2:
            return replace(self, median_heuristic=False)
        sq = cdist(particles, particles, "sqeuclidean")
        median = float(np.median(sq[np.triu_indices(n, k=1)]))
        if median <= 0.0:
            return replace(self, median_heuristic=False)
        bandwidth = median / np.log(n + 1.0)
        logger.debug(f"Median heuristic bandwidth {bandwidth:.4g} for {n} particles")
        return KernelSpec(bandwidth=bandwidth, family=self.family)


def as_state(x) -> np.ndarray:
    """Coerce a scalar or 1-D array-like to a float state vector"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise UsageError(f"expected a state vector, got shape {arr.shape}")
    return arr


def as_particles(particles) -> np.ndarray:
    """Coerce particles to an (N, d) array; a flat list means N scalar particles"""
    arr = np.asarray(particles, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise UsageError(f"expected an (N, d) particle array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise UsageError("particle list is empty")
    return arr


def _check_pair(x, y):
    x, y = as_state(x), as_state(y)
    if x.shape != y.shape:
        raise UsageError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x, y


def _squared_distance(x: np.ndarray, y: np.ndarray) -> float:
    # (x - y) and (y - x) differ only by an exact sign flip, so this is symmetric bitwise
    diff = x - y
    return float(np.dot(diff, diff))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x, y = _check_pair(x, y)
    return float(np.exp(-_squared_distance(x, y) / spec.bandwidth))


def kernel_grad2(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of k(x, .) evaluated at y: (2/h)(x - y) exp(-||x - y||^2 / h)"""
    x, y = _check_pair(x, y)
    value = np.exp(-_squared_distance(x, y) / spec.bandwidth)
    return (2.0 / spec.bandwidth) * (x - y) * value


def kernel_matrix(spec: KernelSpec, xs, ys) -> np.ndarray:
    """N x M block of k(xs[i], ys[j])"""
    xs, ys = _check_blocks(xs, ys)
    return np.exp(-cdist(xs, ys, "sqeuclidean") / spec.bandwidth)


def kernel_grad2_matrix(spec: KernelSpec, xs, ys) -> np.ndarray:
    """N x M x d block of kernel_grad2(xs[i], ys[j])"""
    xs, ys = _check_blocks(xs, ys)
    k = np.exp(-cdist(xs, ys, "sqeuclidean") / spec.bandwidth)
    return (2.0 / spec.bandwidth) * (xs[:, None, :] - ys[None, :, :]) * k[:, :, None]


def _check_blocks(xs, ys):
    xs, ys = as_particles(xs), as_particles(ys)
    if xs.shape[1] != ys.shape[1]:
        raise UsageError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    return xs, ys


def weighted_grad2_sum(spec: KernelSpec, sources: np.ndarray, weights: np.ndarray,
                       eval_points: np.ndarray) -> np.ndarray:
    """(1/N) sum_j weights[j] * kernel_grad2(sources[j], e) for every row e of eval_points

    Uses the factorization sum_j w_j k_je (s_j - e) = (W K)^T S - e * (W K)^T 1,
    which costs O(N M d) without materializing the N x M x d gradient block.
    """
    k = np.exp(-cdist(sources, eval_points, "sqeuclidean") / spec.bandwidth)
    wk = weights[:, None] * k
    pulled = wk.T @ sources
    mass = wk.sum(axis=0)
    return (2.0 / spec.bandwidth) * (pulled - mass[:, None] * eval_points) / sources.shape[0]


def kvif_directions(spec: KernelSpec, prediction_particles, normalized_likelihood,
                    flow_particles, eval_points) -> np.ndarray:
    """Batched KVIF direction at each row of eval_points

    Attraction toward the likelihood-weighted prediction particles minus
    repulsion from the current flow cloud. Both sums go through the same code
    path so identical clouds with unit ratios cancel exactly.
    """
    sources = as_particles(prediction_particles)
    flow = as_particles(flow_particles)
    evals = as_particles(eval_points)
    ratios = np.asarray(normalized_likelihood, dtype=float).reshape(-1)

    n = sources.shape[0]
    if ratios.shape[0] != n or flow.shape[0] != n:
        raise UsageError(
            f"length mismatch: {n} prediction particles, {ratios.shape[0]} likelihood "
            f"ratios, {flow.shape[0]} flow particles"
        )
    if not (sources.shape[1] == flow.shape[1] == evals.shape[1]):
        raise UsageError("prediction, flow and evaluation points must share one dimension")
    if not np.all(np.isfinite(ratios)) or np.any(ratios < 0):
        raise UsageError("normalized likelihood values must be finite and non-negative")

    attraction = weighted_grad2_sum(spec, sources, ratios, evals)
    repulsion = weighted_grad2_sum(spec, flow, np.ones(n), evals)
    return attraction - repulsion


def kvif_direction(spec: KernelSpec, prediction_particles, normalized_likelihood,
                   flow_particles, eval_point) -> np.ndarray:
    eval_point = as_state(eval_point)
    return kvif_directions(spec, prediction_particles, normalized_likelihood,
                           flow_particles, eval_point[None, :])[0]


def svgd_directions(spec: KernelSpec, particles, score_values, eval_points) -> np.ndarray:
    """Batched Stein variational direction (1/N) sum_j [k(x_j, e) score_j + grad_1 k(x_j, e)]"""
    particles = as_particles(particles)
    scores = as_particles(score_values)
    evals = as_particles(eval_points)
    if scores.shape != particles.shape:
        raise UsageError(f"score shape {scores.shape} does not match particles {particles.shape}")
    if evals.shape[1] != particles.shape[1]:
        raise UsageError("evaluation points and particles must share one dimension")

    k = kernel_matrix(spec, particles, evals)
    driving = k.T @ scores / particles.shape[0]
    # grad_1 k(x_j, e) = -kernel_grad2(x_j, e)
    return driving - weighted_grad2_sum(spec, particles, np.ones(particles.shape[0]), evals)


def svgd_direction(spec: KernelSpec, particles, score_values, eval_point) -> np.ndarray:
    eval_point = as_state(eval_point)
    return svgd_directions(spec, particles, score_values, eval_point[None, :])[0]


def svgd_flow(spec: KernelSpec, particles, score_fn: Callable[[np.ndarray], np.ndarray],
              step_size: float, num_steps: int,
              callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Run the n-particle SVGD iteration with an analytic score function

    Args:
        score_fn: maps an (N, d) array to the (N, d) array of grad log p
        callback: called with (step, particles) after every step

    Returns:
        The final (N, d) particle array
    """
    x = as_particles(particles).copy()
    for step in range(1, num_steps + 1):
        x = x + step_size * svgd_directions(spec, x, score_fn(x), x)
        if callback is not None:
            callback(step, x)
    return x
