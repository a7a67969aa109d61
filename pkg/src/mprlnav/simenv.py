"""Episodic navigation environment over the vessel model and occupancy grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dynamics import ControllerState, Setpoint, ShipParams, ShipState, step_dynamics, wrap_angle
from .gridmap import Footprint, OccupancyGrid, rectangle_overlap_depth, sweep_rectangle, swept_collision

PATCH_SIZE = 64


@dataclass(frozen=True)
class EnvConfig:
    d_max: float = 1000.0
    goal_radius: float = 25.0
    r_goal_reached: float = 10.0
    r_collision: float = -20.0
    w_h: float = 1.0
    gamma: float = 0.99
    substeps: int = 10
    max_steps: int = 500
    a_max: float = 0.3

    def __post_init__(self) -> None:
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not self.goal_radius > 0:
            raise ValueError("goal_radius must be positive")
        if self.w_h < 0:
            raise ValueError("w_h must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.substeps < 1 or self.max_steps < 1:
            raise ValueError("substeps and max_steps must be >= 1")
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0


@dataclass(frozen=True, eq=False)
class Observation:
    rel_heading: float
    distance: float
    speed: float
    patch: np.ndarray


@dataclass(frozen=True)
class EnvAction:
    desired_speed: float
    heading_change: float


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    distance: float
    goal: float
    collision: float
    heading: float


@dataclass(frozen=True)
class StepInfo:
    collision: bool
    goal_reached: bool
    position: tuple[float, float]
    truncated: bool = False
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class StepResult:
    obs: Observation
    reward: float
    done: bool
    info: StepInfo
    breakdown: RewardBreakdown


@dataclass(frozen=True)
class EnvSnapshot:
    ship: ShipState
    ctrl: ControllerState
    target: tuple[float, float]
    steps: int
    done: bool


class EpisodeFinished(RuntimeError):
    pass


def reward(d: float, collision: bool, goal: bool, a_h: float, cfg: EnvConfig) -> RewardBreakdown:
    r_d = 1.0 - d / cfg.d_max
    r_g = cfg.r_goal_reached if goal and d < cfg.goal_radius else 0.0
    r_c = cfg.r_collision if collision else 0.0
    r_h = -cfg.w_h * abs(a_h)
    return RewardBreakdown(r_d + r_g + r_c + r_h, r_d, r_g, r_c, r_h)


def local_patch(grid: OccupancyGrid, x: float, y: float, size: int = PATCH_SIZE) -> np.ndarray:
    """Axis-aligned ``size`` x ``size`` window of cells around the cell holding (x, y).

    Rows follow world y like the grid itself; cells beyond the map read as obstacle.
    """
    ci = math.floor((x - grid.origin[0]) / grid.cell_size + 0.5)
    cj = math.floor((y - grid.origin[1]) / grid.cell_size + 0.5)
    half = size // 2
    i0, j0 = ci - half, cj - half
    patch = np.zeros((size, size), dtype=np.uint8)
    gi0, gi1 = max(i0, 0), min(i0 + size, grid.width)
    gj0, gj1 = max(j0, 0), min(j0 + size, grid.height)
    if gi0 < gi1 and gj0 < gj1:
        patch[gj0 - j0 : gj1 - j0, gi0 - i0 : gi1 - i0] = grid.cells[gj0:gj1, gi0:gi1]
    return patch


class NavEnv:
    """Single-vessel environment; one instance is not thread-safe, clones are cheap."""

    def __init__(
        self,
        grid: OccupancyGrid,
        params: ShipParams | None = None,
        cfg: EnvConfig | None = None,
        footprint: Footprint | None = None,
    ) -> None:
        self.grid = grid
        self.params = params or ShipParams()
        self.cfg = cfg or EnvConfig()
        self.footprint = footprint or Footprint(self.params.length, self.params.width, 2.0)
        self.ship: ShipState | None = None
        self.ctrl = ControllerState()
        self.target: tuple[float, float] = (0.0, 0.0)
        self.steps = 0
        self.done = True

    def clone(self) -> "NavEnv":
        env = NavEnv(self.grid, self.params, self.cfg, self.footprint)
        if self.ship is not None:
            env.restore(self.snapshot())
        return env

    # -- episode control ---------------------------------------------------

    def reset(self, start: Pose | Sequence[float], target: Sequence[float]) -> Observation:
        if not isinstance(start, Pose):
            start = Pose(*start)
        pose = (start.x, start.y, start.heading)
        if swept_collision(self.grid, pose, pose[:2], self.footprint):
            raise ValueError(f"start pose {pose} is in collision")
        self.ship = ShipState(start.x, start.y, wrap_angle(start.heading))
        self.ctrl = ControllerState()
        self.target = (float(target[0]), float(target[1]))
        self.steps = 0
        self.done = False
        return self.observe()

    def set_target(self, target: Sequence[float]) -> None:
        """Retarget the episode; an episode that ended only on goal arrival resumes."""
        self.target = (float(target[0]), float(target[1]))
        if self.done and self.steps < self.cfg.max_steps:
            self.done = False

    def snapshot(self) -> EnvSnapshot:
        assert self.ship is not None
        return EnvSnapshot(self.ship, self.ctrl, self.target, self.steps, self.done)

    def restore(self, snap: EnvSnapshot) -> None:
        self.ship = snap.ship
        self.ctrl = snap.ctrl
        self.target = snap.target
        self.steps = snap.steps
        self.done = snap.done

    # -- observation -------------------------------------------------------

    def distance_to_target(self) -> float:
        assert self.ship is not None
        return math.hypot(self.target[0] - self.ship.x, self.target[1] - self.ship.y)

    def observe(self) -> Observation:
        s = self.ship
        assert s is not None
        bearing = math.atan2(self.target[1] - s.y, self.target[0] - s.x)
        return Observation(
            rel_heading=wrap_angle(bearing - s.heading),
            distance=self.distance_to_target(),
            speed=s.speed,
            patch=local_patch(self.grid, s.x, s.y),
        )

    # -- transition --------------------------------------------------------

    def step(self, action: EnvAction) -> StepResult:
        if self.done or self.ship is None:
            raise EpisodeFinished("step() called on a finished episode")
        v = min(max(action.desired_speed, 0.0), self.params.v_max)
        a_h = min(max(action.heading_change, -self.cfg.a_max), self.cfg.a_max)
        clamped = v != action.desired_speed or a_h != action.heading_change

        start = self.ship
        sp = Setpoint(v, wrap_angle(start.heading + a_h))
        ship, ctrl = start, self.ctrl
        for _ in range(self.cfg.substeps):
            ship, ctrl = step_dynamics(ship, ctrl, sp, self.params)
        self.ship, self.ctrl = ship, ctrl
        self.steps += 1

        rect = sweep_rectangle((start.x, start.y), start.heading, (ship.x, ship.y), self.footprint)
        collision = rectangle_overlap_depth(self.grid, rect) > 0.0
        d = self.distance_to_target()
        goal = d < self.cfg.goal_radius
        parts = reward(d, collision, goal, a_h, self.cfg)
        truncated = self.steps >= self.cfg.max_steps
        self.done = collision or goal or truncated
        info = StepInfo(collision, goal, (ship.x, ship.y), truncated and not (collision or goal), clamped)
        return StepResult(self.observe(), parts.total, self.done, info, parts)


def with_d_max(cfg: EnvConfig, start: Sequence[float], goal: Sequence[float]) -> EnvConfig:
    """Per-scenario normaliser: 1.5 x the straight start-to-goal distance."""
    return replace(cfg, d_max=1.5 * math.hypot(goal[0] - start[0], goal[1] - start[1]))
