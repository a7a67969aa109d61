"""SVG figures: paths over the occupancy map, and the obstacle-distance CDF."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..gridmap import FREE, OccupancyGrid, distance_cdf, nearest_obstacle_distances  # noqa: E402
from .runlog import RunLog  # noqa: E402

# planner colours follow the usual red / yellow / blue assignment for mprl / ppo / frenet
PLANNER_COLORS = {"mprl": "#d62728", "ppo": "#e6b800", "frenet": "#1f77b4"}
FALLBACK_COLORS = ("#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "svg.fonttype": "none",
    "svg.hashsalt": "mprlnav",  # stable element ids between runs
}


def _colors(logs: Sequence[RunLog]) -> list[str]:
    out, spare = [], iter(FALLBACK_COLORS * (len(logs) // len(FALLBACK_COLORS) + 1))
    used: set[str] = set()
    for log in logs:
        c = PLANNER_COLORS.get(log.planner)
        if c is None or c in used:
            c = next(spare)
        used.add(c)
        out.append(c)
    return out


def path_figure(logs: Sequence[RunLog], grid: OccupancyGrid, goal: Sequence[float] | None = None):
    """Map raster (obstacles dark) with one polyline per run, start and goal markers, legend."""
    if not logs:
        raise ValueError("need at least one run log to plot")
    with plt.rc_context(RC):
        x0, x1, y0, y1 = _view(grid)
        aspect = (y1 - y0) / (x1 - x0)
        if aspect <= 1.0:
            size = (7.0, max(2.4, 7.0 * aspect + 1.2))
        else:
            size = (max(3.5, 6.0 / aspect + 1.2), 7.0)
        fig, ax = plt.subplots(figsize=size, layout="constrained")
        ax.imshow(
            np.where(grid.cells == FREE, 1.0, 0.0),
            cmap="gray",
            vmin=0.0,
            vmax=1.0,
            origin="lower",
            extent=grid.extent,
            interpolation="nearest",
        )
        for k, (log, color) in enumerate(zip(logs, _colors(logs))):
            xy = np.array(log.xy(), dtype=float)
            label = f"{log.planner} ({log.status})" if log.planner else f"run {k} ({log.status})"
            (line,) = ax.plot(xy[:, 0], xy[:, 1], color=color, label=label)
            line.set_gid(f"run-{k}")
        start = logs[0].poses[0]
        ax.plot(start.x, start.y, marker="o", color="#2ca02c", linestyle="none", gid="start")
        if goal is not None:
            ax.plot(goal[0], goal[1], marker="*", markersize=10, color="#2ca02c", linestyle="none", gid="goal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        fig.legend(loc="outside lower center", ncol=min(len(logs), 3), frameon=False)
    return fig


def _view(grid: OccupancyGrid, pad_cells: int = 8) -> tuple[float, float, float, float]:
    """Bounds of the free water plus a small border, clipped to the map."""
    js, is_ = np.nonzero(grid.cells == FREE)
    if not len(js):
        return grid.extent
    ox, oy = grid.origin
    h = grid.cell_size
    i0, i1 = max(is_.min() - pad_cells, 0), min(is_.max() + pad_cells, grid.width - 1)
    j0, j1 = max(js.min() - pad_cells, 0), min(js.max() + pad_cells, grid.height - 1)
    return (ox + (i0 - 0.5) * h, ox + (i1 + 0.5) * h, oy + (j0 - 0.5) * h, oy + (j1 + 0.5) * h)


def cdf_figure(logs: Sequence[RunLog], grid: OccupancyGrid):
    """Empirical CDF of the nearest-obstacle distance for each run."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2), layout="constrained")
        for k, (log, color) in enumerate(zip(logs, _colors(logs))):
            pts = np.array([p for p in log.xy() if grid.contains(p)], dtype=float)
            if not len(pts):
                continue
            cdf = distance_cdf(nearest_obstacle_distances(grid, pts))
            (line,) = ax.step(cdf.values, cdf.probabilities, where="post", color=color, label=log.planner or f"run {k}")
            line.set_gid(f"cdf-{k}")
        ax.axvline(10.0, color="0.5", linestyle=":", linewidth=0.8)
        ax.set_xlabel("distance to nearest obstacle [m]")
        ax.set_ylabel("cumulative probability")
        ax.set_ylim(0.0, 1.0)
        ax.legend(loc="lower right")
    return fig


def emit_plot(
    logs: Sequence[RunLog], grid: OccupancyGrid, out_path: str | Path, goal: Sequence[float] | None = None
) -> list[Path]:
    """Write ``out_path`` (paths) and ``<stem>_cdf.svg`` next to it; returns the written files."""
    out = Path(out_path)
    if not out.parent.exists():
        raise FileNotFoundError(f"output directory {out.parent} does not exist")
    written = []
    fig = path_figure(logs, grid, goal)
    try:
        fig.savefig(out, format="svg")
    finally:
        plt.close(fig)
    written.append(out)
    if any(log.poses for log in logs):
        fig = cdf_figure(logs, grid)
        cdf_path = out.with_name(out.stem + "_cdf.svg")
        try:
            fig.savefig(cdf_path, format="svg")
        finally:
            plt.close(fig)
        written.append(cdf_path)
    return written
