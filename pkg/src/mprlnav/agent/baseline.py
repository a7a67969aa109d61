"""Value functions for bootstrapping, the PPO waypoint planner and open-water training tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..gridmap import OccupancyGrid
from ..simenv import EnvConfig, EnvSnapshot, NavEnv, Observation, Pose
from .network import MlpParams, deterministic_action, encode, forward

ValueFn = Callable[[Observation, EnvConfig], float]


def heuristic_value(
    obs: Observation,
    cfg: EnvConfig,
    closing_speed: float = 5.0,
    step_time: float | None = None,
) -> float:
    """Reward-to-go if the ship closed on the target in a straight line.

    The distance after ``k`` steps is ``max(d - k * closing_speed * step_time, 0)``;
    the distance term is summed over all future steps in closed form and the
    goal bonus is discounted to the first step that lands inside the goal radius.
    """
    step_time = step_time if step_time is not None else cfg.substeps * 0.5
    stride = closing_speed * step_time
    g = cfg.gamma
    d = obs.distance
    # sum_{k>=1} g^k (1 - d_k / d_max), d_k reaches zero after m steps
    m = math.ceil(d / stride) if d > 0 else 0
    ks = np.arange(1, m + 1)
    dk = np.maximum(d - ks * stride, 0.0)
    value = g / (1.0 - g) - float(np.sum(g**ks * dk)) / cfg.d_max
    if d < cfg.goal_radius:
        arrival = 0
    else:
        arrival = math.floor((d - cfg.goal_radius) / stride) + 1
    return value + g**arrival * cfg.r_goal_reached


@dataclass(frozen=True, eq=False)
class CriticValue:
    """Adapter exposing a trained value head through the value-function interface."""

    params: MlpParams
    v_max: float = 5.0

    def __call__(self, obs: Observation, cfg: EnvConfig) -> float:
        return forward(self.params, encode(obs, cfg, self.v_max))[2]


ValueSource = Union[ValueFn, CriticValue]


@dataclass(frozen=True)
class Failure:
    reason: str
    position: tuple[float, float] | None = None

    def __bool__(self) -> bool:
        return False


def ppo_plan_waypoints(
    params: MlpParams,
    env: NavEnv,
    snapshot: EnvSnapshot,
    num_waypoints: int,
    steps_per_waypoint: int = 4,
) -> list[tuple[float, float]] | Failure:
    """Roll the deterministic policy forward and drop a waypoint every few steps.

    A collision while producing the first waypoint is a failure; a later
    collision truncates the list after the last safe waypoint.
    """
    sim = env.clone()
    sim.restore(snapshot)
    waypoints: list[tuple[float, float]] = []
    for k in range(num_waypoints):
        for _ in range(steps_per_waypoint):
            x = encode(sim.observe(), sim.cfg, sim.params.v_max)
            res = sim.step(deterministic_action(params, x, sim.params.v_max, sim.cfg.a_max))
            if res.info.collision:
                if k == 0:
                    return Failure("collision while generating the first waypoint", res.info.position)
                return waypoints
            if res.done:
                waypoints.append(res.info.position)
                return waypoints
        waypoints.append((sim.ship.x, sim.ship.y))
    return waypoints


# --------------------------------------------------------------------------
# Open-water task used for training and the evaluation gate


@dataclass(frozen=True)
class OpenWaterTask:
    """Random start heading and target bearing at a fixed range in an obstacle-free grid."""

    distance: float = 300.0
    cells: int = 256
    cell_size: float = 3.125
    cfg: EnvConfig = EnvConfig(d_max=450.0, r_goal_reached=100.0, w_h=0.01, max_steps=100)
    seed: int = 0

    def grid(self) -> OccupancyGrid:
        return _open_grid(self.cells, self.cell_size)

    def make_env(self, episode: int, params=None) -> NavEnv:
        from ..dynamics import ShipParams

        grid = self.grid()
        rng = np.random.default_rng([self.seed, episode])
        c = 0.5 * (self.cells - 1) * self.cell_size
        heading = float(rng.uniform(-math.pi, math.pi))
        bearing = float(rng.uniform(-math.pi, math.pi))
        target = (c + self.distance * math.cos(bearing), c + self.distance * math.sin(bearing))
        env = NavEnv(grid, params or ShipParams(), self.cfg)
        env.reset(Pose(c, c, heading), target)
        return env


_GRIDS: dict[tuple[int, float], OccupancyGrid] = {}


def _open_grid(cells: int, cell_size: float) -> OccupancyGrid:
    key = (cells, cell_size)
    if key not in _GRIDS:
        _GRIDS[key] = OccupancyGrid(np.ones((cells, cells), dtype=np.uint8), cell_size)
    return _GRIDS[key]


def evaluate_goal_rate(params: MlpParams, task: OpenWaterTask, episodes: int = 50, offset: int = 1_000_000) -> float:
    """Fraction of deterministic-policy episodes that reach the goal."""
    reached = 0
    for k in range(episodes):
        env = task.make_env(offset + k)
        while True:
            x = encode(env.observe(), env.cfg, env.params.v_max)
            res = env.step(deterministic_action(params, x, env.params.v_max, env.cfg.a_max))
            if res.done:
                reached += int(res.info.goal_reached and not res.info.collision)
                break
    return reached / episodes
