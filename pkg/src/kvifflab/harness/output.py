"""
Result Files

runs.csv         method,trial,step,error          every trial, every step
summary.csv      method,step,median_error         median curve per method
aggregate.csv    method,median_aggregate,median_curve_mean
diagnostics.csv  method,trial,step,spread,ess     ensemble spread and effective sample size
error.svg        median error curves              (plot=true)
trajectory.svg   trial-0 estimates vs truth       (plot=true)

CSV files use LF line endings and shortest round-trip float formatting.
An empty ess cell means the method carries no weights (kf, enkf).
Wall times are measured, so they only appear in the console table and log.
SVG output is byte-deterministic for fixed input.
"""

import csv
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core.errors import UsageError  # noqa: E402
from .experiment import ExperimentSummary, RunRecord  # noqa: E402


logger = logging.getLogger(__name__)

RUNS_HEADER = ["method", "trial", "step", "error"]
SUMMARY_HEADER = ["method", "step", "median_error"]
AGGREGATE_HEADER = ["method", "median_aggregate", "median_curve_mean"]
DIAGNOSTICS_HEADER = ["method", "trial", "step", "spread", "ess"]

SVG_RC = {
    "svg.hashsalt": "kvifflab",
    "svg.fonttype": "none",
    "path.simplify": False,
}

PathLike = Union[str, Path]


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_rows(path: PathLike, header: List[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.debug(f"Wrote {path}")
    return path


def write_csv(records: Sequence[RunRecord], path: PathLike) -> Path:
    """Long-format per-step errors; steps are numbered from 1"""
    rows = (
        (record.method, record.trial, step, _fmt(error))
        for record in records
        for step, error in enumerate(record.per_step_error, start=1)
    )
    return _write_rows(path, RUNS_HEADER, rows)


def read_runs_csv(path: PathLike) -> List[RunRecord]:
    """Parse a runs.csv file back into records (wall times are not stored)"""
    series: Dict[tuple, List[tuple]] = OrderedDict()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != RUNS_HEADER:
            raise UsageError(f"{path}: expected header {','.join(RUNS_HEADER)}, got {reader.fieldnames}")
        for row in reader:
            key = (row["method"], int(row["trial"]))
            series.setdefault(key, []).append((int(row["step"]), float(row["error"])))

    records = []
    for (method, trial), points in series.items():
        errors = np.array([error for _, error in sorted(points)])
        records.append(RunRecord(method=method, trial=trial, per_step_error=errors,
                                 aggregate_error=float(errors.mean()), wall_time=0.0))
    return records


def write_summary_csv(summary: ExperimentSummary, path: PathLike, aggregate_path: PathLike) -> List[Path]:
    curve_rows = (
        (label, step, _fmt(value))
        for label, method in summary.methods.items()
        for step, value in enumerate(method.median_curve, start=1)
    )
    aggregate_rows = (
        (label, _fmt(m.median_aggregate), _fmt(m.median_curve_mean))
        for label, m in summary.methods.items()
    )
    return [
        _write_rows(path, SUMMARY_HEADER, curve_rows),
        _write_rows(aggregate_path, AGGREGATE_HEADER, aggregate_rows),
    ]


def _optional(values, step: int) -> str:
    if values is None or not np.isfinite(values[step]):
        return ""
    return _fmt(values[step])


def write_diagnostics_csv(records: Sequence[RunRecord], path: PathLike) -> Path:
    """Per-step ensemble spread and ESS; steps are numbered from 1"""
    rows = (
        (record.method, record.trial, step + 1, _optional(record.spreads, step), _optional(record.ess, step))
        for record in records
        for step in range(len(record.per_step_error))
    )
    return _write_rows(path, DIAGNOSTICS_HEADER, rows)


def _save_svg(fig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path


def write_svg_plot(series: Mapping[str, Sequence[float]], path: PathLike,
                   title: str = "Median L2 error", xlabel: str = "step",
                   ylabel: str = "L2 error") -> Path:
    """Line chart with one line and one legend entry per named series

    Raises:
        UsageError: no series, an empty series, or series of unequal length
    """
    if not series:
        raise UsageError("write_svg_plot needs at least one series")
    lengths = {len(values) for values in series.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise UsageError(f"series must be non-empty and of equal length, got lengths {sorted(lengths)}")

    steps = np.arange(1, lengths.pop() + 1)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name, values in series.items():
            ax.plot(steps, np.asarray(values, dtype=float), label=name, linewidth=1.2)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _save_svg(fig, path)


def write_trajectory_svg(truth: np.ndarray, trajectories: Mapping[str, np.ndarray], path: PathLike,
                         title: str = "Trajectories (trial 0)") -> Path:
    """Overlay estimates on the truth in the plane of the first two state coordinates"""
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2 or truth.shape[0] == 0 or truth.shape[1] < 2:
        raise UsageError("trajectory plots need a non-empty truth with at least two coordinates")
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.plot(truth[:, 0], truth[:, 1], color="black", linewidth=1.6, label="truth")
        for name, path_estimates in trajectories.items():
            est = np.asarray(path_estimates, dtype=float)
            ax.plot(est[:, 0], est[:, 1], linewidth=1.0, label=name)
        ax.set_title(title)
        ax.set_xlabel("x[0]")
        ax.set_ylabel("x[1]")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        return _save_svg(fig, path)


def write_outputs(summary: ExperimentSummary, out_dir: PathLike, plot: bool = False) -> List[Path]:
    """Write every result file for one experiment into out_dir"""
    out_dir = Path(out_dir)
    written = [write_csv(summary.records, out_dir / "runs.csv")]
    written += write_summary_csv(summary, out_dir / "summary.csv", out_dir / "aggregate.csv")
    written.append(write_diagnostics_csv(summary.records, out_dir / "diagnostics.csv"))
    if plot:
        curves = {label: m.median_curve for label, m in summary.methods.items()}
        written.append(write_svg_plot(curves, out_dir / "error.svg",
                                      title=f"Median L2 error, {summary.config.scenario}"))
        if summary.truth_states is not None:
            written.append(write_trajectory_svg(summary.truth_states, summary.trajectories,
                                                out_dir / "trajectory.svg"))
    logger.info(f"Wrote {len(written)} result files to {out_dir}")
    return written
