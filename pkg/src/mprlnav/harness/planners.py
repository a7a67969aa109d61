"""Local planners behind one interface: current env state in, waypoints or a handover out."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

from ..agent.baseline import CriticValue, Failure, ValueSource, heuristic_value, ppo_plan_waypoints
from ..agent.network import MlpParams
from ..frenet import FrenetConfig, FrenetFailure, ReferencePath, plan_frenet
from ..mprl import Handover, MprlConfig, plan
from ..simenv import NavEnv

PLANNERS = ("mprl", "ppo", "frenet")


@dataclass(frozen=True)
class LocalPlan:
    waypoints: tuple[tuple[float, float], ...]
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PlanFailure:
    reason: str
    diagnostics: dict = field(default_factory=dict)


class Planner(Protocol):
    name: str

    def replan_interval(self, env: NavEnv) -> int: ...

    def plan(self, env: NavEnv) -> LocalPlan | PlanFailure: ...


@dataclass
class MprlPlanner:
    cfg: MprlConfig = field(default_factory=MprlConfig)
    value_fn: ValueSource = heuristic_value
    name: str = "mprl"

    def replan_interval(self, env: NavEnv) -> int:
        return self.cfg.waypoint_stride

    def plan(self, env: NavEnv) -> LocalPlan | PlanFailure:
        out = plan(env, env.snapshot(), self.cfg, self.value_fn)
        if isinstance(out, Handover):
            return PlanFailure(out.reason, {"chosen_index": out.diagnostics["chosen_index"]})
        return LocalPlan(out.points, {"chosen_index": out.chosen_index, "returns": out.returns})


@dataclass
class PpoPlanner:
    params: MlpParams
    num_waypoints: int = 4
    steps_per_waypoint: int = 4
    replan_steps: int = 2
    name: str = "ppo"

    def replan_interval(self, env: NavEnv) -> int:
        return self.replan_steps

    def plan(self, env: NavEnv) -> LocalPlan | PlanFailure:
        out = ppo_plan_waypoints(self.params, env, env.snapshot(), self.num_waypoints, self.steps_per_waypoint)
        if isinstance(out, Failure):
            return PlanFailure(out.reason)
        if not out:
            return PlanFailure("policy produced no waypoints")
        return LocalPlan(tuple(out))


@dataclass
class FrenetPlanner:
    cfg: FrenetConfig
    reference: ReferencePath
    replan_seconds: float = 4.0
    name: str = "frenet"

    def replan_interval(self, env: NavEnv) -> int:
        step_time = env.cfg.substeps * env.params.dt
        return max(1, math.ceil(self.replan_seconds / step_time - 1e-9))

    def plan(self, env: NavEnv) -> LocalPlan | PlanFailure:
        s = env.ship
        out = plan_frenet((s.x, s.y, s.heading), s.speed, self.reference, env.grid, env.footprint, self.cfg)
        if isinstance(out, FrenetFailure):
            return PlanFailure(out.reason)
        return LocalPlan(out.points, {"chosen_index": out.chosen_index})


def critic_value(params: MlpParams, v_max: float = 5.0) -> CriticValue:
    return CriticValue(params, v_max)
