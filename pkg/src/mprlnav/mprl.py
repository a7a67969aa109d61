"""Model predictive RL planner: enumerate heading-change sequences, simulate, bootstrap, pick.

Every candidate starts from the same environment snapshot and holds a
constant cruise speed. Its heading-change sequence begins at ``a0`` and moves
by a fixed ``delta`` each step. Candidates are scored by an n-step return
that is bootstrapped with a value function, and the best candidate's
simulated positions become the waypoints.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .agent.baseline import ValueSource
from .gridmap import swept_collision
from .simenv import EnvAction, EnvConfig, EnvSnapshot, NavEnv, Observation


@dataclass(frozen=True)
class MprlConfig:
    j: int = 7
    l: int = 5
    n: int = 8
    gamma: float = 0.99
    cruise_speed: float = 2.0
    waypoint_stride: int = 2
    a_max: float = 0.3
    delta_max: float | None = None  # defaults to a_max / n
    workers: int = 1

    def __post_init__(self) -> None:
        if self.j < 1 or self.l < 1 or self.n < 1:
            raise ValueError("j, l and n must be >= 1")
        if self.waypoint_stride < 1 or self.n % self.waypoint_stride:
            raise ValueError("waypoint_stride must divide n")
        if not self.cruise_speed > 0:
            raise ValueError("cruise_speed must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.j * self.l

    @property
    def step_delta(self) -> float:
        return self.a_max / self.n if self.delta_max is None else self.delta_max


@dataclass(frozen=True, eq=False)
class CandidateTrajectory:
    index: int
    initial_action: float
    delta: float
    actions: tuple[float, ...]
    states: tuple[tuple[float, float, float], ...]  # (x, y, heading), start pose first
    rewards: tuple[float, ...]
    terminal_obs: Observation
    terminal: bool
    first_step_collision: bool
    g_return: float = float("nan")


@dataclass(frozen=True)
class Waypoints:
    points: tuple[tuple[float, float], ...]
    chosen_index: int
    returns: tuple[float, ...]


@dataclass(frozen=True)
class Handover:
    reason: str
    diagnostics: dict


PlanOutcome = Waypoints | Handover


def _levels(count: int, bound: float) -> list[float]:
    if count == 1:
        return [0.0]
    return [float(v) for v in np.linspace(-bound, bound, count)]


def unfold(a0: float, delta: float, n: int, a_max: float) -> tuple[float, ...]:
    """Action sequence with ``a[t+1] = clamp(a[t] + delta)``."""
    seq = [min(a_max, max(-a_max, a0))]
    for _ in range(n - 1):
        seq.append(min(a_max, max(-a_max, seq[-1] + delta)))
    return tuple(seq)


def generate_action_sequences(cfg: MprlConfig) -> list[tuple[float, float, tuple[float, ...]]]:
    """All ``j * l`` candidates as ``(a0, delta, actions)``, ``a0`` varying slowest."""
    out = []
    for a0 in _levels(cfg.j, cfg.a_max):
        for delta in _levels(cfg.l, cfg.step_delta):
            out.append((a0, delta, unfold(a0, delta, cfg.n, cfg.a_max)))
    return out


def rollout_candidate(
    env: NavEnv,
    snapshot: EnvSnapshot,
    actions: Sequence[float],
    cfg: MprlConfig,
    index: int = 0,
    a0: float | None = None,
    delta: float = 0.0,
) -> CandidateTrajectory:
    """Simulate one action sequence from ``snapshot`` on a private copy of ``env``.

    The rollout stops early when the episode ends. Only a collision counts as
    terminal for bootstrapping; arriving at the active target hands over to
    the next target, so the value of the arrival state still applies.
    """
    sim = env.clone()
    sim.restore(snapshot)
    s = sim.ship
    states = [(s.x, s.y, s.heading)]
    rewards: list[float] = []
    terminal = False
    first_collision = False
    obs = sim.observe()
    for t, a in enumerate(actions):
        if sim.done:
            break
        res = sim.step(EnvAction(cfg.cruise_speed, a))
        rewards.append(res.reward)
        s = sim.ship
        states.append((s.x, s.y, s.heading))
        obs = res.obs
        if t == 0:
            first_collision = res.info.collision
        if res.info.collision:
            terminal = True
        if res.done:
            break
    return CandidateTrajectory(
        index=index,
        initial_action=actions[0] if a0 is None else a0,
        delta=delta,
        actions=tuple(actions),
        states=tuple(states),
        rewards=tuple(rewards),
        terminal_obs=obs,
        terminal=terminal,
        first_step_collision=first_collision,
    )


def n_step_return(
    rewards: Sequence[float],
    terminal_obs: Observation | None,
    terminal: bool,
    value_fn: ValueSource | None,
    gamma: float,
    env_cfg: EnvConfig | None = None,
) -> float:
    """Discounted reward sum plus ``gamma**m * V(S_m)`` unless the rollout ended terminally."""
    m = len(rewards)
    if m < 1:
        raise ValueError("need at least one reward")
    g = 0.0
    discount = 1.0
    for r in rewards:
        g += discount * r
        discount *= gamma
    if not terminal:
        g += discount * value_fn(terminal_obs, env_cfg)
    return g


def select_trajectory(candidates: Sequence[CandidateTrajectory]) -> CandidateTrajectory:
    """Highest ``g_return``; ties go to the smallest index."""
    if not candidates:
        raise ValueError("no candidates to select from")
    best = candidates[0]
    for c in candidates[1:]:
        if c.g_return > best.g_return or (c.g_return == best.g_return and c.index < best.index):
            best = c
    return best


def emitted_waypoints(cand: CandidateTrajectory, stride: int) -> tuple[tuple[float, float], ...]:
    steps = len(cand.states) - 1
    idx = list(range(stride, steps + 1, stride))
    if not idx or idx[-1] != steps:
        idx.append(steps)
    return tuple((cand.states[i][0], cand.states[i][1]) for i in idx if i > 0)


def evaluate_candidates(
    env: NavEnv, snapshot: EnvSnapshot, cfg: MprlConfig, value_fn: ValueSource
) -> list[CandidateTrajectory]:
    menu = generate_action_sequences(cfg)

    def run(item):
        i, (a0, delta, actions) = item
        cand = rollout_candidate(env, snapshot, actions, cfg, i, a0, delta)
        g = n_step_return(cand.rewards, cand.terminal_obs, cand.terminal, value_fn, cfg.gamma, env.cfg)
        return replace(cand, g_return=g)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(run, enumerate(menu)))
    return [run(item) for item in enumerate(menu)]


def plan(env: NavEnv, snapshot: EnvSnapshot, cfg: MprlConfig, value_fn: ValueSource) -> PlanOutcome:
    """Choose the best candidate and emit its positions every ``waypoint_stride`` steps.

    A handover is requested when the straight transition from the current pose
    to the first emitted waypoint collides.
    """
    candidates = evaluate_candidates(env, snapshot, cfg, value_fn)
    best = select_trajectory(candidates)
    points = emitted_waypoints(best, cfg.waypoint_stride)
    returns = tuple(c.g_return for c in candidates)
    start = best.states[0]
    if not points or swept_collision(env.grid, start, points[0], env.footprint):
        return Handover(
            "transition to the first waypoint collides",
            {
                "chosen_index": best.index,
                "start": start,
                "first_waypoint": points[0] if points else None,
                "first_step_collision": best.first_step_collision,
                "returns": returns,
            },
        )
    return Waypoints(points, best.index, returns)
