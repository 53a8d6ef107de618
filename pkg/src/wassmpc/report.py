"""Delimited logs and figures written next to each other in the output dir."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "wassmpc"

import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig
from .harness import RunLog, RunMetrics

SUMMARY_COLUMNS = ("run", "violation_pct", "max_constraint",
                   "mean_iter_time_s", "completion_metric")

_STATE_COLUMNS = {"battery": ("soc", "v_rc1", "v_rc2"),
                  "vehicle": ("x1", "x2", "heading", "speed")}
_INPUT_COLUMNS = {"battery": ("current",), "vehicle": ("accel", "steer")}


def _fmt(value: float) -> str:
    return repr(float(value))


def run_csv_name(log: RunLog) -> str:
    mode = "dro" if log.dro_enabled else "nodro"
    return f"run_{log.study}_{mode}_seed{log.seed}.csv"


def write_run_csv(log: RunLog, out_dir: str | Path) -> Path:
    """Per-timestep log; offset columns are blank past the active horizon."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / run_csv_name(log)
    header = (
        ["t"]
        + list(_STATE_COLUMNS[log.study])
        + list(_INPUT_COLUMNS[log.study])
        + ["constraint_value"]
        + [f"offset_depth{d}" for d in range(1, log.n_target + 1)]
        + ["horizon", "feasible_flag", "violation_flag", "violation_magnitude",
           "solve_ms"]
    )
    lines = [",".join(header)]
    for rec in log.records:
        offsets = ["" for _ in range(log.n_target)]
        if rec.offsets is not None:
            for i, val in enumerate(rec.offsets[: log.n_target]):
                offsets[i] = _fmt(val)
        row = (
            [str(rec.t)]
            + [_fmt(v) for v in rec.state]
            + [_fmt(v) for v in rec.inputs]
            + [_fmt(rec.constraint_value)]
            + offsets
            + [str(rec.horizon), str(int(rec.feasible)), str(int(rec.violation)),
               _fmt(rec.violation_magnitude), _fmt(rec.solve_ms)]
        )
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_summary_csv(metrics: list[RunMetrics], summary: RunMetrics,
                      out_dir: str | Path, name: str = "summary.csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    lines = [",".join(SUMMARY_COLUMNS)]
    for m in metrics:
        lines.append(",".join([
            str(m.seed), _fmt(m.violation_pct), _fmt(m.max_constraint),
            _fmt(m.mean_iter_time_s), m.completion,
        ]))
    lines.append(",".join([
        "average", _fmt(summary.violation_pct), _fmt(summary.max_constraint),
        _fmt(summary.mean_iter_time_s), summary.completion,
    ]))
    path.write_text("\n".join(lines) + "\n")
    return path


def plot_run(log: RunLog, config: ExperimentConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = "dro" if log.dro_enabled else "nodro"
    path = out / f"run_{log.study}_{mode}_seed{log.seed}.svg"
    if log.study == "battery":
        _plot_battery(log, config, path)
    else:
        _plot_vehicle(log, path)
    return path


def _plot_battery(log: RunLog, config: ExperimentConfig, path: Path) -> None:
    p = config.battery
    t = np.array([r.t for r in log.records]) * p.dt
    voltage = np.array([r.constraint_value for r in log.records])
    soc = np.array([r.state[0] for r in log.records])
    current = np.array([r.inputs[0] for r in log.records])

    fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
    axes[0].plot(t, voltage, lw=1.0, color="tab:blue")
    axes[0].axhline(p.v_limit, color="tab:red", ls="--", lw=1.0, label="limit")
    axes[0].set_ylabel("terminal voltage [V]")
    axes[0].legend(loc="lower right")
    axes[1].plot(t, soc, lw=1.0, color="tab:green")
    axes[1].axhline(p.soc_target, color="gray", ls=":", lw=1.0)
    axes[1].set_ylabel("state of charge [-]")
    axes[2].plot(t, current, lw=1.0, color="tab:orange")
    axes[2].set_ylabel("current [A]")
    axes[2].set_xlabel("time [s]")
    mode = "robust" if log.dro_enabled else "nominal"
    fig.suptitle(f"battery fast charge, {mode}, seed {log.seed}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_vehicle(log: RunLog, path: Path) -> None:
    xs = np.array([r.state[0] for r in log.records])
    ys = np.array([r.state[1] for r in log.records])

    fig, ax = plt.subplots(figsize=(7, 7))
    field = log.field_ref
    if field is not None:
        # Coarsen the 401x401 grid for a light-weight SVG.
        stride = 4
        c = field.coords[::stride]
        z = field.z[::stride, ::stride]
        ax.contourf(c, c, z.T, levels=12, cmap="Greys")
        ax.contour(c, c, z.T, levels=[field.cutoff], colors="tab:red", linewidths=1.2)
    ax.plot(xs, ys, color="tab:blue", lw=1.4)
    ax.plot(xs[0], ys[0], marker="o", color="tab:green")
    violated = [r for r in log.records if r.violation]
    if violated:
        ax.scatter([r.state[0] for r in violated], [r.state[1] for r in violated],
                   marker="x", color="tab:red", s=30, zorder=5)
    ax.set_xlabel("x1 [m]")
    ax.set_ylabel("x2 [m]")
    ax.set_aspect("equal")
    mode = "robust" if log.dro_enabled else "nominal"
    ax.set_title(f"obstacle run, {mode}, seed {log.seed}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def export(logs: list[RunLog], metrics: list[RunMetrics], summary: RunMetrics,
           config: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Per-run CSVs, the summary CSV mirroring the result tables, and figures."""
    written = []
    for log in logs:
        written.append(write_run_csv(log, out_dir))
        written.append(plot_run(log, config, out_dir))
    written.append(write_summary_csv(metrics, summary, out_dir))
    return written
