"""
Oracle Module

Ground truth that does not depend on the particle code: 1D grid Bayes
filtering, a conservative finite-difference integrator for the density
evolution dq/dt = -div(q phi) driven by the KVIF velocity field, and the
weighted L2 (MMD-type) loss the flow decreases.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from .errors import DegenerateLikelihoodError, StepSizeError, UsageError
from .kernel import KernelSpec, kernel_matrix


logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-300
INSTABILITY_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Density samples on n equispaced nodes of [lo, hi]"""

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not self.lo < self.hi:
            raise UsageError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if values.ndim != 1 or values.shape[0] < 2:
            raise UsageError("grid needs at least two nodes")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise UsageError("grid density values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_density(cls, lo: float, hi: float, n: int, pdf: Callable[[np.ndarray], np.ndarray]) -> "Grid1D":
        nodes = np.linspace(lo, hi, n)
        return cls(lo, hi, np.asarray(pdf(nodes), dtype=float)).normalized()

    @classmethod
    def gaussian(cls, mean: float, std: float, lo: float = -8.0, hi: float = 8.0, n: int = 801) -> "Grid1D":
        return cls.from_density(lo, hi, n, lambda x: norm.pdf(x, loc=mean, scale=std))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def weights(self) -> np.ndarray:
        return quadrature_weights(self.lo, self.hi, self.n)

    def mass(self) -> float:
        return float(trapezoid(self.values, dx=self.dx))

    def normalized(self) -> "Grid1D":
        mass = self.mass()
        if mass < MASS_FLOOR:
            raise DegenerateLikelihoodError(f"grid mass {mass:.3e} is too small to normalize")
        return Grid1D(self.lo, self.hi, self.values / mass)

    def mean(self) -> float:
        return float(trapezoid(self.nodes * self.values, dx=self.dx))

    def variance(self) -> float:
        centered = self.nodes - self.mean()
        return float(trapezoid(centered ** 2 * self.values, dx=self.dx))

    def same_grid(self, other: "Grid1D") -> bool:
        return self.lo == other.lo and self.hi == other.hi and self.n == other.n


def quadrature_weights(lo: float, hi: float, n: int) -> np.ndarray:
    """Trapezoid weights; they double as finite-volume cell widths"""
    weights = np.full(n, (hi - lo) / (n - 1))
    weights[[0, -1]] *= 0.5
    return weights


@lru_cache(maxsize=16)
def _grid_operators(bandwidth: float, lo: float, hi: float, n: int):
    nodes = np.linspace(lo, hi, n).reshape(-1, 1)
    spec = KernelSpec(bandwidth=bandwidth)
    k = kernel_matrix(spec, nodes, nodes)
    # entry [i, s] = kernel_grad2(s, x_i) = (2/h)(s - x_i) k(s, x_i)
    grad = (2.0 / bandwidth) * (nodes.T - nodes) * k
    k.setflags(write=False)
    grad.setflags(write=False)
    return k, grad


def _check_same(p: Grid1D, q: Grid1D):
    if not p.same_grid(q):
        raise UsageError("densities live on different grids")


def grid_bayes_update(prior: Grid1D, log_lik: Callable[[np.ndarray], np.ndarray]) -> Grid1D:
    """Posterior proportional to prior * exp(log_lik), renormalized by trapezoid quadrature"""
    log_values = np.asarray(log_lik(prior.nodes), dtype=float)
    finite = log_values[np.isfinite(log_values)]
    shift = finite.max() if finite.size else 0.0
    values = prior.values * np.exp(log_values - shift)
    mass = float(trapezoid(values, dx=prior.dx))
    if not mass >= MASS_FLOOR:
        raise DegenerateLikelihoodError(f"posterior mass {mass:.3e} underflowed")
    return Grid1D(prior.lo, prior.hi, values / mass)


def grid_predict(grid: Grid1D, drift: Callable[[np.ndarray], np.ndarray], variance: float) -> Grid1D:
    """Chapman-Kolmogorov step for x' = drift(x) + N(0, variance) on the same grid"""
    if variance <= 0:
        raise UsageError(f"transition variance must be positive, got {variance}")
    nodes = grid.nodes
    transition = norm.pdf(nodes[:, None], loc=drift(nodes)[None, :], scale=np.sqrt(variance))
    values = transition @ (grid.weights * grid.values)
    return Grid1D(grid.lo, grid.hi, values).normalized()


def weighted_l2_loss(kernel: KernelSpec, p: Grid1D, q: Grid1D) -> float:
    """Double trapezoid quadrature of the integral of (p - q)(x) k(x, x') (p - q)(x')"""
    _check_same(p, q)
    k, _ = _grid_operators(kernel.bandwidth, p.lo, p.hi, p.n)
    v = p.weights * (p.values - q.values)
    return float(v @ k @ v)


def flow_velocity(kernel: KernelSpec, p: Grid1D, q: Grid1D) -> np.ndarray:
    """phi(x_i) = integral of kernel_grad2(s, x_i) (p(s) - q(s)) ds at every node"""
    _check_same(p, q)
    _, grad = _grid_operators(kernel.bandwidth, p.lo, p.hi, p.n)
    return grad @ (p.weights * (p.values - q.values))


def _total_variation(values: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(values))))


def _advance(kernel: KernelSpec, p: Grid1D, q: Grid1D, dt_flow: float):
    """One explicit Euler step; returns (new grid, clipped mass, mass drift before clipping)"""
    phi = flow_velocity(kernel, p, q)
    flux = q.values * phi
    cells = q.weights
    # face fluxes by central averaging, zero flux through both boundaries
    faces = np.concatenate(([0.0], 0.5 * (flux[:-1] + flux[1:]), [0.0]))
    rate = -(faces[1:] - faces[:-1]) / cells
    values = q.values + dt_flow * rate

    drift = float(np.dot(cells, values)) - float(np.dot(cells, q.values))
    negative = values < 0
    clipped = float(-np.dot(cells[negative], values[negative]))
    if clipped > 0.0:
        values = np.where(negative, 0.0, values)
        values = values / np.dot(cells, values)

    before, after = _total_variation(q.values), _total_variation(values)
    if before > 0 and after > INSTABILITY_FACTOR * before:
        raise StepSizeError(
            f"total variation grew from {before:.3e} to {after:.3e}; reduce dt_flow={dt_flow:g}"
        )
    return Grid1D(q.lo, q.hi, values), clipped, drift


def fokker_planck_step(kernel: KernelSpec, p: Grid1D, q: Grid1D, dt_flow: float) -> Grid1D:
    """Advance q by dt_flow under dq/dt = -div(q phi) with the KVIF velocity toward p"""
    if dt_flow <= 0:
        raise UsageError(f"dt_flow must be positive, got {dt_flow}")
    _check_same(p, q)
    new_q, clipped, _ = _advance(kernel, p, q, dt_flow)
    if clipped > 0.0:
        logger.debug(f"Clipped {clipped:.3e} negative density mass")
    return new_q


@dataclass
class FlowTrace:
    losses: List[float] = field(default_factory=list)
    clipped: List[float] = field(default_factory=list)
    mass_drift: List[float] = field(default_factory=list)
    final: Optional[Grid1D] = None

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(np.asarray(self.losses))

    @property
    def max_delta(self) -> float:
        return float(self.deltas.max()) if len(self.losses) > 1 else 0.0

    @property
    def max_clipped(self) -> float:
        return max(self.clipped, default=0.0)


def fokker_planck_flow(kernel: KernelSpec, p: Grid1D, q0: Grid1D, dt_flow: float, steps: int,
                       stop_below: Optional[float] = None) -> FlowTrace:
    """Integrate the density flow for up to `steps` steps, recording the loss after each

    With `stop_below` set, integration ends at the first loss at or below it.
    """
    if dt_flow <= 0:
        raise UsageError(f"dt_flow must be positive, got {dt_flow}")
    _check_same(p, q0)
    trace = FlowTrace(losses=[weighted_l2_loss(kernel, p, q0)])
    q = q0
    for _ in range(steps):
        if stop_below is not None and trace.losses[-1] <= stop_below:
            break
        q, clipped, drift = _advance(kernel, p, q, dt_flow)
        trace.losses.append(weighted_l2_loss(kernel, p, q))
        trace.clipped.append(clipped)
        trace.mass_drift.append(drift)
    trace.final = q
    if trace.max_clipped > 0:
        logger.info(f"Density flow clipped at most {trace.max_clipped:.3e} mass per step")
    return trace


def mmd2_estimate(kernel: KernelSpec, xs, ys) -> float:
    """Biased (V-statistic) squared MMD between two samples"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise UsageError("mmd2_estimate needs two non-empty samples")
    return float(
        kernel_matrix(kernel, xs, xs).mean()
        + kernel_matrix(kernel, ys, ys).mean()
        - 2.0 * kernel_matrix(kernel, xs, ys).mean()
    )
