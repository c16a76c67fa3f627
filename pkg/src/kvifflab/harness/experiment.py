"""
Experiment Harness

Runs every configured method on `repeats` seeded trials and reduces the
per-step L2 errors to medians over trials.

Seeding: trial t uses seed base_seed ^ t. The truth is simulated once per
trial from that seed and shared by every method; each method filters with
its own seed derived from the trial seed and its label.
"""

import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from ..config.experiment import ExperimentConfig, MethodSpec
from ..config.settings import settings
from ..core.errors import ExperimentError, KviffLabError, UsageError
from ..core.filters import run_filter
from ..core.models import ScenarioSpec, TruthRun, build_scenario, simulate_truth


logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int], None]


@dataclass
class RunRecord:
    """One method on one trial"""

    method: str
    trial: int
    per_step_error: np.ndarray
    aggregate_error: float
    wall_time: float
    spreads: Optional[np.ndarray] = None
    ess: Optional[np.ndarray] = None


@dataclass
class MethodSummary:
    label: str
    median_curve: np.ndarray
    median_aggregate: float
    median_curve_mean: float
    median_wall_time: float


@dataclass
class ExperimentSummary:
    config: ExperimentConfig
    records: List[RunRecord]
    methods: Dict[str, MethodSummary] = field(default_factory=dict)
    truth_states: Optional[np.ndarray] = None
    trajectories: Dict[str, np.ndarray] = field(default_factory=dict)

    def records_for(self, label: str) -> List[RunRecord]:
        return [r for r in self.records if r.method == label]


def l2_error_series(estimates, truth) -> np.ndarray:
    """e_k = ||estimates[k] - truth[k]||_2 for every step"""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.ndim == 1:
        estimates = estimates.reshape(-1, 1)
    if truth.ndim == 1:
        truth = truth.reshape(-1, 1)
    if estimates.shape != truth.shape:
        raise UsageError(f"estimate shape {estimates.shape} does not match truth shape {truth.shape}")
    return np.linalg.norm(estimates - truth, axis=1)


def trial_seed(base_seed: int, trial: int) -> int:
    return base_seed ^ trial


def method_seed(seed: int, label: str) -> int:
    """Filter seed for one method within one trial"""
    sequence = np.random.SeedSequence([seed, zlib.crc32(label.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _run_method(scenario: ScenarioSpec, method: MethodSpec, truth: TruthRun,
                trial: int, num_particles: int):
    started = time.perf_counter()
    result = run_filter(scenario, method.name, method.kviff, truth,
                        seed=method_seed(truth.seed, method.label), num_particles=num_particles)
    elapsed = time.perf_counter() - started
    errors = l2_error_series(result.estimates, truth.states[1:])
    record = RunRecord(
        method=method.label,
        trial=trial,
        per_step_error=errors,
        aggregate_error=float(errors.mean()),
        wall_time=elapsed,
        spreads=result.spreads,
        ess=result.ess,
    )
    return record, result.estimates


def _run_trial(config: ExperimentConfig, scenario: ScenarioSpec, trial: int):
    seed = trial_seed(config.base_seed, trial)
    try:
        truth = simulate_truth(scenario, seed)
        records, estimates = [], {}
        for method in config.methods:
            record, path = _run_method(scenario, method, truth, trial, config.num_particles)
            records.append(record)
            estimates[method.label] = path
            logger.debug(f"Trial {trial} {method.label}: aggregate {record.aggregate_error:.4g} "
                         f"in {record.wall_time:.2f}s")
        return records, truth, estimates
    except KviffLabError as e:
        logger.error(f"Trial {trial} (seed {seed}) failed: {e}")
        raise ExperimentError(trial, seed, e) from e
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
        logger.error(f"Trial {trial} (seed {seed}) failed: {e}")
        raise ExperimentError(trial, seed, e) from e


def summarize(config: ExperimentConfig, records: List[RunRecord]) -> ExperimentSummary:
    """Per-method medians over trials; records are ordered by (method, trial)"""
    order = {label: i for i, label in enumerate(config.labels)}
    records = sorted(records, key=lambda r: (order.get(r.method, len(order)), r.trial))
    summary = ExperimentSummary(config=config, records=records)
    for label in config.labels:
        runs = summary.records_for(label)
        if not runs:
            continue
        curves = np.vstack([r.per_step_error for r in runs])
        median_curve = np.median(curves, axis=0)
        summary.methods[label] = MethodSummary(
            label=label,
            median_curve=median_curve,
            median_aggregate=float(np.median([r.aggregate_error for r in runs])),
            median_curve_mean=float(median_curve.mean()),
            median_wall_time=float(np.median([r.wall_time for r in runs])),
        )
    return summary


def run_experiment(config: ExperimentConfig,
                   progress: Optional[ProgressCallback] = None) -> ExperimentSummary:
    """Run all trials (concurrently, at most settings.threads at a time)

    Args:
        config: validated experiment configuration
        progress: called with (finished trials, total trials)

    Returns:
        ExperimentSummary with records, medians and trial-0 trajectories

    Raises:
        ExperimentError: the first failing trial, identified by index and seed
    """
    scenario = build_scenario(config.scenario)
    workers = max(1, min(settings.threads, config.repeats))
    logger.info(f"Running {config.scenario}: {config.repeats} trials x {len(config.methods)} methods, "
                f"N={config.num_particles}, {workers} worker(s)")

    records: List[RunRecord] = []
    first_trial = None
    done = 0
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(_run_trial, config, scenario, t): t for t in range(config.repeats)}
        try:
            for future in as_completed(futures):
                trial_records, truth, estimates = future.result()
                records.extend(trial_records)
                if futures[future] == 0:
                    first_trial = (truth, estimates)
                done += 1
                if progress is not None:
                    progress(done, config.repeats)
        except ExperimentError:
            for pending in futures:
                pending.cancel()
            raise

    summary = summarize(config, records)
    if first_trial is not None:
        truth, estimates = first_trial
        summary.truth_states = truth.states[1:]
        summary.trajectories = {label: estimates[label] for label in config.labels}

    for label, method in summary.methods.items():
        logger.info(f"{label}: median aggregate L2 {method.median_aggregate:.4g}, "
                    f"median wall time {method.median_wall_time:.2f}s")
    return summary
