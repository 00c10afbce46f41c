"""Static SVG plots of phase portraits, 3-D trajectory sets and tracking runs."""
import logging
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .filter_core import FilterData  # noqa: E402
from .simulator import Outcome, TrackingResult, Trajectory  # noqa: E402

logger = logging.getLogger(__name__)

_OUTCOME_COLORS = {
    Outcome.CONVERGED: "tab:blue",
    Outcome.DIVERGED: "tab:red",
    Outcome.HORIZON_REACHED: "tab:gray",
}


def _save(fig, path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Plot saved to {path}")
    return path


def _line_in_box(normal: np.ndarray, offset: float, lim: float):
    """Points of {x : normal @ x + offset = 0} inside the square [-lim, lim]^2."""
    a, b = normal
    s = np.linspace(-lim, lim, 2)
    if abs(b) >= abs(a):
        return s, -(a * s + offset) / b
    return -(b * s + offset) / a, s


def plot_phase_portrait(trajectories: list[Trajectory], fd: FilterData, path, title: str | None = None, lim: float | None = None):
    """
    Planar trajectories over the safe set boundary c^T x + d = 0 and the
    switching line eta(x) = 0, with the filtered region shaded.
    """
    if fd.n != 2:
        raise ValueError(f"phase portraits need n = 2, got n = {fd.n}")
    if lim is None:
        starts = np.array([t.states[0] for t in trajectories]) if trajectories else np.zeros((1, 2))
        lim = 1.2 * max(float(np.max(np.abs(starts))), 1.0)

    fig, ax = plt.subplots(figsize=(6, 6))
    grid = np.linspace(-lim, lim, 200)
    X1, X2 = np.meshgrid(grid, grid)
    eta = fd.eta(np.stack([X1.ravel(), X2.ravel()], axis=1)).reshape(X1.shape)
    ax.contourf(X1, X2, (eta < 0).astype(float), levels=[0.5, 1.5], colors=["mistyrose"], alpha=0.6)

    ax.plot(*_line_in_box(fd.constraint.c, fd.constraint.d, lim), color="black", linewidth=1.5, label="boundary of C")
    ax.plot(*_line_in_box(fd.v2, fd.alpha * fd.constraint.d, lim), color="darkred", linestyle="--", label="switching line")

    for traj in trajectories:
        color = _OUTCOME_COLORS[traj.outcome]
        ax.plot(traj.states[:, 0], traj.states[:, 1], color=color, linewidth=0.8, alpha=0.8)
        ax.plot(*traj.states[0], marker="o", markersize=3, color=color)

    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(title or "Filtered closed loop")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, linestyle="--", linewidth=0.5)
    return _save(fig, path)


def plot_trajectories_3d(trajectories: list[Trajectory], path, title: str | None = None):
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    for traj in trajectories:
        if traj.states.shape[1] != 3:
            raise ValueError(f"3-D plots need n = 3, got n = {traj.states.shape[1]}")
        # diverging runs are clipped so the converging ones stay visible
        states = traj.states[np.linalg.norm(traj.states, axis=1) < 50.0]
        color = _OUTCOME_COLORS[traj.outcome]
        ax.plot(states[:, 0], states[:, 1], states[:, 2], color=color, linewidth=0.8)
        ax.scatter(*traj.states[0], color=color, s=8)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_zlabel("x3")
    ax.set_title(title or "Filtered closed loop")
    return _save(fig, path)


def plot_tracking(result: TrackingResult, limit: float, path, title: str | None = None):
    """Output under the nominal and the filtered controller against the command and the bound."""
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(result.command.index, result.command.values, color="gray", linestyle=":", label="command")
    ax.plot(result.nominal_output.index, result.nominal_output.values, color="tab:orange", label="nominal")
    ax.plot(result.filtered_output.index, result.filtered_output.values, color="tab:blue", label="safety filter")
    ax.axhline(limit, color="black", linestyle="--", linewidth=1.0, label=f"limit {limit:g}")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("p_s (rad/s)")
    ax.set_title(title or "Output tracking under the safety filter")
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(True, which="both", linestyle="--", linewidth=0.5)
    return _save(fig, path)
