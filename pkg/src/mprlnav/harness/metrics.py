from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..gridmap import OccupancyGrid, distance_cdf, nearest_obstacle_distances
from .runlog import RunLog


@dataclass(frozen=True)
class Metrics:
    status: str
    goal_reached: bool
    collision_count: int
    handover_count: int
    path_length: float
    distances: tuple[float, ...] = field(repr=False)
    runtime: float = 0.0

    def fraction_below(self, x: float) -> float:
        """Share of logged poses closer than ``x`` metres to an obstacle."""
        if not self.distances:
            return 0.0
        return sum(1 for d in self.distances if d < x) / len(self.distances)

    def summary(self) -> dict:
        return {
            "status": self.status,
            "goal_reached": self.goal_reached,
            "collision_count": self.collision_count,
            "handover_count": self.handover_count,
            "path_length": self.path_length,
            "fraction_below_10m": self.fraction_below(10.0),
            "min_obstacle_distance": min(self.distances) if self.distances else math.nan,
            "samples": len(self.distances),
            "runtime": self.runtime,
        }

    def cdf(self):
        return distance_cdf(self.distances)


def compute_metrics(log: RunLog, grid: OccupancyGrid, runtime: float = 0.0) -> Metrics:
    if not log.poses:
        raise ValueError("run log has no poses")
    xy = np.array(log.xy(), dtype=float)
    inside = [p for p in xy if grid.contains(p)]
    distances = nearest_obstacle_distances(grid, np.array(inside)) if inside else np.empty(0)
    length = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0
    return Metrics(
        status=log.status,
        goal_reached=log.status == "goal",
        collision_count=log.count("collision"),
        handover_count=log.count("handover"),
        path_length=length,
        distances=tuple(float(d) for d in distances),
        runtime=runtime,
    )
