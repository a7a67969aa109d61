"""Closed-loop episodes: plan, follow waypoints by line of sight, re-plan, log."""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ..agent.network import MlpParams
from ..agent.ppo import load_checkpoint
from ..dynamics import Setpoint, ShipState, wrap_angle
from ..frenet import fit_reference
from ..simenv import EnvAction, NavEnv
from .planners import PLANNERS, FrenetPlanner, MprlPlanner, Planner, PlanFailure, PpoPlanner
from .runlog import Event, PoseSample, RunLog
from .scenarios import Scenario


def los_setpoint(
    state: ShipState,
    waypoints: Sequence[Sequence[float]],
    active_index: int,
    accept_radius: float,
    cruise_speed: float,
) -> tuple[Setpoint, int]:
    """Steer straight at the active waypoint, skipping those already within ``accept_radius``."""
    if not waypoints:
        raise ValueError("waypoint list is empty")
    idx = active_index
    while idx < len(waypoints) and math.hypot(waypoints[idx][0] - state.x, waypoints[idx][1] - state.y) < accept_radius:
        idx += 1
    if idx >= len(waypoints):
        return Setpoint(0.0, state.heading), idx
    wx, wy = waypoints[idx][0], waypoints[idx][1]
    return Setpoint(cruise_speed, math.atan2(wy - state.y, wx - state.x)), idx


def make_env(scenario: Scenario) -> NavEnv:
    return NavEnv(scenario.grid, scenario.ship, scenario.env_cfg, scenario.footprint)


def make_planner(
    name: str,
    scenario: Scenario,
    *,
    params: MlpParams | None = None,
    checkpoint: str | Path | None = None,
    workers: int = 1,
) -> Planner:
    """Planner ``name`` configured from the scenario; PPO needs ``params`` or a checkpoint."""
    if name not in PLANNERS:
        raise ValueError(f"unknown planner {name!r}; expected one of {', '.join(PLANNERS)}")
    if name == "mprl":
        return MprlPlanner(replace(scenario.mprl, workers=workers))
    if name == "frenet":
        return FrenetPlanner(scenario.frenet, fit_reference(scenario.route_for(name).waypoints))
    if params is None:
        if checkpoint is None:
            raise ValueError("the ppo planner needs a parameter checkpoint")
        params, _ = load_checkpoint(checkpoint)
    return PpoPlanner(params)


def run_episode(scenario: Scenario, planner: Planner, max_steps: int | None = None) -> RunLog:
    env = make_env(scenario)
    route = scenario.route_for(planner.name).waypoints
    goal = route[-1]
    active = 1 if len(route) > 1 else 0
    env.reset(scenario.start, route[active])
    step_time = env.cfg.substeps * env.params.dt
    cap = max_steps if max_steps is not None else scenario.max_steps
    radius = env.cfg.goal_radius
    log = RunLog(scenario.name, planner.name)

    def record(step: int) -> None:
        s = env.ship
        log.poses.append(PoseSample(step, step * step_time, s.x, s.y, s.heading, s.speed))

    def event(step: int, kind: str, detail: str = "") -> None:
        log.events.append(Event(step, step * step_time, kind, detail))

    def advance_global(step: int) -> None:
        nonlocal active
        s = env.ship
        while active < len(route) - 1 and math.hypot(route[active][0] - s.x, route[active][1] - s.y) < radius:
            event(step, "advance", f"{active}")
            active += 1
            env.set_target(route[active])

    record(0)
    local: tuple[tuple[float, float], ...] = ()
    idx = 0
    since_plan = 0
    step = 0
    while True:
        if math.hypot(goal[0] - env.ship.x, goal[1] - env.ship.y) < radius:
            event(step, "goal")
            break
        if step >= cap:
            event(step, "timeout")
            break
        if not local or idx >= len(local) or since_plan >= planner.replan_interval(env):
            out = planner.plan(env)
            if isinstance(out, PlanFailure):
                event(step, "handover", out.reason)
                break
            local, idx, since_plan = out.waypoints, 0, 0
            log.waypoints.append((step, step * step_time, local))
            event(step, "plan", str(out.diagnostics.get("chosen_index", "")))

        sp, idx = los_setpoint(env.ship, local, idx, scenario.accept_radius, scenario.cruise_speed)
        if idx >= len(local):
            if since_plan > 0:
                since_plan = planner.replan_interval(env)
                continue
            # a fresh plan already inside the acceptance radius: head for its last point once
            wx, wy = local[-1]
            heading = math.atan2(wy - env.ship.y, wx - env.ship.x) if (wx, wy) != (env.ship.x, env.ship.y) else env.ship.heading
            sp = Setpoint(scenario.cruise_speed, heading)
        a_h = wrap_angle(sp.desired_heading - env.ship.heading)
        a_h = max(-env.cfg.a_max, min(env.cfg.a_max, a_h))
        res = env.step(EnvAction(sp.desired_speed, a_h))
        step += 1
        since_plan += 1
        record(step)
        if res.info.collision:
            event(step, "collision")
            break
        advance_global(step)
        if env.done and math.hypot(goal[0] - env.ship.x, goal[1] - env.ship.y) >= radius:
            event(step, "timeout", "environment step cap")
            break
    return log
