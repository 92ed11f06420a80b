"""Figure rendering for estimation runs (file output only, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_TRUTH_STYLE = dict(color="0.25", lw=1.6, label="truth")
_EST_STYLE = dict(color="tab:red", lw=0.9, label="estimate")


def render_run_figures(report, setup, out_dir) -> list[Path]:
    """Write the standard truth-vs-estimate figures for one run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    upto = report.scans_completed
    t = report.t_scan[: upto + 1]
    est = report.x_est[: upto + 1]
    tru = report.truth_channels[: upto + 1]
    written = [
        _voltage_figure(report, setup, t, est, tru,
                        out_dir / "voltage_magnitude.png"),
        _rotor_figure(report, setup, t, est, tru, out_dir / "rotor_states.png"),
        _iterations_figure(report, t, out_dir / "iterations.png"),
    ]
    return written


def _voltage_figure(report, setup, t, est, tru, path: Path) -> Path:
    n_d = setup.model.n_diff
    buses = setup.area
    vm_e = np.hypot(est[:, n_d::2], est[:, n_d + 1::2])
    vm_t = np.hypot(tru[:, n_d::2], tru[:, n_d + 1::2])
    cols = 3
    rows = -(-len(buses) // cols)
    fig, axes = plt.subplots(
        rows, cols, figsize=(11, 2.2 * rows), sharex=True, squeeze=False
    )
    for j, bus in enumerate(buses):
        ax = axes[j // cols][j % cols]
        ax.plot(t, vm_t[:, j], **_TRUTH_STYLE)
        ax.plot(t, vm_e[:, j], **_EST_STYLE)
        ax.set_title(f"bus {bus}", fontsize=9)
        ax.tick_params(labelsize=8)
    for j in range(len(buses), rows * cols):
        axes[j // cols][j % cols].set_axis_off()
    axes[0][0].legend(fontsize=8, loc="lower left")
    for ax in axes[-1]:
        ax.set_xlabel("time (s)", fontsize=8)
    fig.suptitle(
        f"voltage magnitude, {report.scheme}, seed {report.seed}", fontsize=11
    )
    fig.supylabel("|V| (pu)", fontsize=9)
    fig.tight_layout(rect=(0.01, 0, 1, 0.96))
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _rotor_figure(report, setup, t, est, tru, path: Path) -> Path:
    fleet = setup.fleet
    ns = fleet.n_states
    machines = setup.area_machines
    fig, axes = plt.subplots(
        2, len(machines), figsize=(2.9 * len(machines), 5.0),
        sharex=True, squeeze=False,
    )
    for j, mach in enumerate(machines):
        for row, state in enumerate(("delta", "omega")):
            c = j * ns + fleet.state_index(state)
            ax = axes[row][j]
            ax.plot(t, tru[:, c], **_TRUTH_STYLE)
            ax.plot(t, est[:, c], **_EST_STYLE)
            ax.tick_params(labelsize=8)
            if row == 0:
                ax.set_title(f"machine {mach.bus_id}", fontsize=9)
    axes[0][0].set_ylabel("rotor angle (rad)", fontsize=9)
    axes[1][0].set_ylabel("speed deviation (pu)", fontsize=9)
    axes[0][0].legend(fontsize=8, loc="best")
    for ax in axes[-1]:
        ax.set_xlabel("time (s)", fontsize=8)
    fig.suptitle(
        f"rotor states, {report.scheme}, seed {report.seed}", fontsize=11
    )
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _iterations_figure(report, t, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 2.8))
    ax.step(t[1:], report.iterations[1: t.size], where="post",
            color="tab:blue", lw=0.8)
    ax.set_xlabel("time (s)", fontsize=9)
    ax.set_ylabel("inner iterations", fontsize=9)
    ax.set_title(f"iterations per scan, {report.scheme}", fontsize=10)
    ax.tick_params(labelsize=8)
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
