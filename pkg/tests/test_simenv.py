from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprlnav.gridmap import OBSTACLE, OccupancyGrid, swept_collision
from mprlnav.harness.scenarios import build_scenario_straight
from mprlnav.simenv import EnvAction, EnvConfig, EpisodeFinished, NavEnv, Pose, reward, with_d_max

from conftest import open_grid


# -- reward ------------------------------------------------------------------


def test_reward_at_goal():
    r = reward(0.0, False, True, 0.0, EnvConfig(r_goal_reached=10.0))
    assert r.total == 11.0
    assert (r.distance, r.goal, r.collision, r.heading) == (1.0, 10.0, 0.0, 0.0)


def test_reward_at_d_max_vanishes():
    cfg = EnvConfig(d_max=800.0)
    assert reward(800.0, False, False, 0.0, cfg).total == 0.0


def test_reward_all_four_terms():
    cfg = EnvConfig(d_max=800.0, r_collision=-20.0, w_h=1.0, a_max=0.5)
    r = reward(400.0, True, False, 0.5, cfg)
    assert r.total == -20.0
    assert (r.distance, r.goal, r.collision, r.heading) == (0.5, 0.0, -20.0, -0.5)


def test_goal_bonus_needs_goal_radius():
    cfg = EnvConfig(goal_radius=25.0)
    assert reward(30.0, False, True, 0.0, cfg).goal == 0.0
    assert reward(24.9, False, True, 0.0, cfg).goal == cfg.r_goal_reached


cfgs = st.builds(
    EnvConfig,
    d_max=st.floats(10.0, 5000.0),
    w_h=st.floats(0.0, 5.0),
    r_goal_reached=st.floats(0.0, 100.0),
    r_collision=st.floats(-100.0, 0.0),
)


@given(cfg=cfgs, d=st.floats(0.0, 5000.0), col=st.booleans(), goal=st.booleans(), a=st.floats(-0.3, 0.3))
def test_reward_is_sum_of_components(cfg, d, col, goal, a):
    r = reward(d, col, goal, a, cfg)
    assert r.total == r.distance + r.goal + r.collision + r.heading
    if d <= cfg.d_max:
        assert 0.0 <= r.distance <= 1.0


@given(cfg=cfgs, d=st.floats(0.0, 4000.0), step=st.floats(0.5, 100.0), a=st.floats(-0.3, 0.3))
def test_reward_strictly_decreasing_in_distance(cfg, d, step, a):
    # compare on the same side of the goal radius so the bonus does not switch
    near, far = d, d + step
    goal = far < cfg.goal_radius
    assert reward(far, False, goal, a, cfg).total < reward(near, False, goal, a, cfg).total


@given(cfg=cfgs, d=st.floats(0.0, 4000.0), a=st.floats(0.0, 0.3), b=st.floats(0.0, 0.3))
def test_reward_nonincreasing_in_heading_change(cfg, d, a, b):
    lo, hi = sorted((a, b))
    assert reward(d, False, False, -hi, cfg).total <= reward(d, False, False, lo, cfg).total


def test_config_invariants():
    for bad in (dict(d_max=0.0), dict(goal_radius=-1.0), dict(w_h=-0.1), dict(gamma=1.0), dict(substeps=0)):
        with pytest.raises(ValueError):
            EnvConfig(**bad)


def test_d_max_is_one_and_a_half_times_the_start_goal_distance():
    assert with_d_max(EnvConfig(), (0.0, 0.0), (300.0, 400.0)).d_max == 750.0


# -- reset / observe ---------------------------------------------------------


def make_env(grid=None, **cfg) -> NavEnv:
    return NavEnv(grid or open_grid(128), cfg=EnvConfig(**cfg))


def test_reset_at_goal_is_inside_goal_radius():
    env = make_env()
    obs = env.reset(Pose(200.0, 200.0, 0.0), (200.0, 200.0))
    assert obs.distance < env.cfg.goal_radius


def test_reset_geometry():
    env = make_env()
    obs = env.reset(Pose(100.0, 200.0, 0.0), (200.0, 200.0))
    assert obs.rel_heading == 0.0
    assert obs.distance == 100.0
    assert obs.speed == 0.0


def test_reset_in_obstacle_raises():
    cells = np.ones((64, 64), dtype=np.uint8)
    cells[30:34, 30:34] = OBSTACLE
    env = NavEnv(OccupancyGrid(cells, 3.125))
    with pytest.raises(ValueError):
        env.reset(Pose(100.0, 100.0, 0.0), (150.0, 150.0))


def test_patch_all_free_in_open_map():
    env = make_env(open_grid(64))
    obs = env.reset(Pose(32 * 3.125, 32 * 3.125, 0.0), (150.0, 100.0))
    assert obs.patch.shape == (64, 64)
    assert np.all(obs.patch == 1)


def test_patch_outside_map_reads_obstacle():
    env = make_env(open_grid(128))
    env.reset(Pose(20.0, 20.0, math.pi / 4), (100.0, 100.0))
    # move the ship onto the map corner without the reset footprint check
    env.ship = type(env.ship)(0.0, 0.0, 0.0)
    patch = env.observe().patch
    assert np.all(patch[:32, :] == 0)
    assert np.all(patch[:, :32] == 0)
    assert np.all(patch[32:, 32:] == 1)


def test_target_behind_gives_pi():
    env = make_env()
    obs = env.reset(Pose(200.0, 200.0, 0.0), (100.0, 200.0))
    assert obs.rel_heading == math.pi


# -- step --------------------------------------------------------------------


def test_zero_speed_from_rest_stays_put():
    env = make_env()
    env.reset(Pose(200.0, 200.0, 0.0), (300.0, 200.0))
    res = env.step(EnvAction(0.0, 0.0))
    assert res.info.position == (200.0, 200.0)
    assert not res.info.collision and not res.done


def test_driving_into_a_wall_collides():
    cells = np.ones((64, 64), dtype=np.uint8)
    cells[:, 14:] = OBSTACLE  # wall from x = 43.75 m
    env = NavEnv(OccupancyGrid(cells, 3.125), cfg=EnvConfig())
    env.reset(Pose(30.0, 100.0, 0.0), (150.0, 100.0))
    env.ship = type(env.ship)(30.0, 100.0, 0.0, speed=3.0)
    res = env.step(EnvAction(3.0, 0.0))
    assert res.info.collision and res.done
    assert res.breakdown.collision == env.cfg.r_collision


def test_step_clamps_and_records_out_of_range_actions():
    env = make_env()
    env.reset(Pose(200.0, 200.0, 0.0), (300.0, 200.0))
    res = env.step(EnvAction(9.0, 2.0))
    assert res.info.clamped
    assert res.breakdown.heading == -env.cfg.w_h * env.cfg.a_max


def test_step_after_done_raises():
    env = make_env(max_steps=1)
    env.reset(Pose(200.0, 200.0, 0.0), (300.0, 200.0))
    assert env.step(EnvAction(1.0, 0.0)).done
    with pytest.raises(EpisodeFinished):
        env.step(EnvAction(1.0, 0.0))


def scripted_run(env, start, target, script):
    env.reset(start, target)
    trace = []
    for a in script:
        res = env.step(a)
        trace.append((env.ship, res.reward, res.done))
        if res.done:
            break
    return trace


def test_fixed_script_on_straight_scenario_replays_identically():
    sc = build_scenario_straight()
    script = [EnvAction(2.0, 0.3 * math.sin(0.7 * k)) for k in range(20)]

    def fresh():
        return NavEnv(sc.grid, sc.ship, sc.env_cfg, sc.footprint)

    first = scripted_run(fresh(), sc.start, sc.route.waypoints[1], script)
    second = scripted_run(fresh(), sc.start, sc.route.waypoints[1], script)
    assert len(first) == 20
    assert first == second


@settings(max_examples=30, deadline=None)
@given(actions=st.lists(st.tuples(st.floats(-1.0, 6.0), st.floats(-1.0, 1.0)), min_size=1, max_size=6))
def test_episode_ends_by_the_step_cap(actions):
    env = make_env(max_steps=12)
    env.reset(Pose(200.0, 200.0, 0.0), (1000.0, 1000.0))
    for k in range(12):
        v, a = actions[k % len(actions)]
        res = env.step(EnvAction(v, a))
        if res.done:
            break
    assert env.done


def test_snapshot_restore_reproduces_future(rng):
    env = make_env()
    env.reset(Pose(150.0, 150.0, 0.2), (300.0, 250.0))
    for _ in range(3):
        env.step(EnvAction(2.0, 0.1))
    snap = env.snapshot()
    script = [EnvAction(float(rng.uniform(0, 5)), float(rng.uniform(-0.3, 0.3))) for _ in range(8)]
    a = [env.step(x).info for x in script]
    env.restore(snap)
    b = [env.step(x).info for x in script]
    assert a == b
    clone = env.clone()
    assert clone.snapshot() == env.snapshot()


def test_collision_flag_matches_swept_check():
    sc = build_scenario_straight()
    env = NavEnv(sc.grid, sc.ship, sc.env_cfg, sc.footprint)
    env.reset(sc.start, sc.route.waypoints[1])
    for k in range(60):
        before = env.ship
        res = env.step(EnvAction(3.0, 0.3 if k % 10 < 5 else -0.3))
        after = env.ship
        expected = swept_collision(sc.grid, (before.x, before.y, before.heading), (after.x, after.y), sc.footprint)
        assert res.info.collision == expected
        if res.done:
            break
