from __future__ import annotations

import csv
import json
import math
import re
from collections import deque
from dataclasses import dataclass, replace

import numpy as np
import pytest
from scipy import ndimage
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from mprlnav import cli
from mprlnav.dynamics import ShipState
from mprlnav.globalplan import GlobalRoute
from mprlnav.gridmap import FREE, OBSTACLE, OccupancyGrid, swept_collision, world_to_cell
from mprlnav.harness.metrics import compute_metrics
from mprlnav.harness.planners import LocalPlan, PlanFailure
from mprlnav.harness.plotting import emit_plot
from mprlnav.harness.runlog import TERMINAL_EVENTS, Event, PoseSample, RunLog
from mprlnav.harness.runner import los_setpoint, make_planner, run_episode
from mprlnav.harness.scenarios import (
    CORNER_CHANNEL,
    build_scenario_corner,
    build_scenario_straight,
    data_dir,
    load_scenario,
    traversable,
)
from mprlnav.simenv import EnvConfig, Pose

from conftest import open_grid

DATA = data_dir()


@pytest.fixture(scope="module")
def straight():
    return load_scenario("straight")


@pytest.fixture(scope="module")
def corner():
    return load_scenario("corner")


@pytest.fixture(scope="module")
def mprl_straight_log(straight):
    return run_episode(straight, make_planner("mprl", straight))


# -- line of sight -----------------------------------------------------------


def ship_at(x, y, heading=0.0):
    return ShipState(x, y, heading, 0.0, 0.0, 0.0)


def test_los_bearing_north():
    sp, idx = los_setpoint(ship_at(0.0, 0.0), [(0.0, 100.0)], 0, 10.0, 2.0)
    assert sp.desired_heading == pytest.approx(math.pi / 2, abs=1e-15)
    assert sp.desired_speed == 2.0 and idx == 0


def test_los_advances_inside_radius():
    _, idx = los_setpoint(ship_at(0.0, 0.0), [(3.0, 4.0), (100.0, 0.0)], 0, 10.0, 2.0)
    assert idx == 1


def test_los_exhausted_holds_heading():
    sp, idx = los_setpoint(ship_at(0.0, 0.0, 0.7), [(3.0, 4.0), (-2.0, 1.0)], 0, 10.0, 2.0)
    assert idx == 2
    assert sp.desired_speed == 0.0 and sp.desired_heading == 0.7


def test_los_empty_raises():
    with pytest.raises(ValueError):
        los_setpoint(ship_at(0.0, 0.0), [], 0, 10.0, 2.0)


@given(x=st.floats(-500, 500), y=st.floats(-500, 500), wx=st.floats(-500, 500), wy=st.floats(-500, 500))
def test_los_heading_is_bearing(x, y, wx, wy):
    sp, idx = los_setpoint(ship_at(x, y), [(wx, wy)], 0, 10.0, 2.0)
    if math.hypot(wx - x, wy - y) < 10.0:
        assert idx == 1 and sp.desired_speed == 0.0
    else:
        assert idx == 0
        assert math.cos(sp.desired_heading) * (wx - x) + math.sin(sp.desired_heading) * (wy - y) == pytest.approx(
            math.hypot(wx - x, wy - y), rel=1e-9
        )


# -- episodes ----------------------------------------------------------------


@dataclass
class StubPlanner:
    """Hands over at once, or always returns the same waypoint list."""

    waypoints: tuple = ()
    name: str = "stub"

    def replan_interval(self, env) -> int:
        return 2

    def plan(self, env):
        if not self.waypoints:
            return PlanFailure("stub refuses")
        return LocalPlan(tuple(self.waypoints))


def walled_scenario():
    cells = np.ones((64, 64), dtype=np.uint8)
    cells[:, 30:32] = OBSTACLE
    grid = OccupancyGrid(cells, 3.125)
    start, goal = Pose(20.0, 100.0, 0.0), (180.0, 100.0)
    straight = build_scenario_straight()
    return replace(
        straight,
        name="walled",
        grid=grid,
        start=start,
        goal=goal,
        route=GlobalRoute(((start.x, start.y), goal), 150.0, 200.0),
        env_cfg=EnvConfig(d_max=240.0, w_h=0.01, max_steps=1000),
        obstacles=(),
    )


def test_handover_planner_ends_immediately(straight):
    log = run_episode(straight, StubPlanner())
    assert [e.kind for e in log.events] == ["handover"]
    assert log.events[0].step == 0 and log.events[0].detail == "stub refuses"
    assert len(log.poses) == 1


def test_single_terminal_event_and_time_order(mprl_straight_log):
    for log in (mprl_straight_log, run_episode(walled_scenario(), StubPlanner(((180.0, 100.0),)))):
        assert sum(e.kind in TERMINAL_EVENTS for e in log.events) == 1
        assert log.events[-1].kind in TERMINAL_EVENTS
        times = [e.t for e in log.events]
        assert times == sorted(times)
        assert [p.step for p in log.poses] == list(range(len(log.poses)))


def test_collision_events_match_swept_collision():
    sc = walled_scenario()
    log = run_episode(sc, StubPlanner(((180.0, 100.0),)))
    assert log.status == "collision"
    fp = sc.footprint
    flags = [
        swept_collision(sc.grid, (a.x, a.y, a.heading), (b.x, b.y), fp) for a, b in zip(log.poses, log.poses[1:])
    ]
    hit = log.terminal.step
    assert flags[hit - 1] and not any(flags[: hit - 1])


def test_advance_events_within_goal_radius(straight, mprl_straight_log):
    route = straight.route.waypoints
    advances = [e for e in mprl_straight_log.events if e.kind == "advance"]
    assert [int(e.detail) for e in advances] == list(range(1, len(route) - 1))
    for e in advances:
        p = mprl_straight_log.poses[e.step]
        assert math.dist((p.x, p.y), route[int(e.detail)]) < straight.env_cfg.goal_radius


def test_mprl_straight_reaches_goal(straight, mprl_straight_log):
    m = compute_metrics(mprl_straight_log, straight.grid)
    assert m.goal_reached and m.collision_count == 0 and m.handover_count == 0
    assert m.path_length >= math.dist((straight.start.x, straight.start.y), straight.goal)


@pytest.mark.parametrize("name", ["mprl", "frenet"])
def test_episode_is_deterministic(corner, name):
    a = run_episode(corner, make_planner(name, corner))
    b = run_episode(corner, make_planner(name, corner, workers=3))
    assert a == b


def test_unknown_planner_rejected(straight):
    with pytest.raises(ValueError):
        make_planner("astar", straight)
    with pytest.raises(ValueError):
        make_planner("ppo", straight)


def test_runlog_round_trip(tmp_path, mprl_straight_log):
    mprl_straight_log.save(tmp_path)
    assert RunLog.load(tmp_path) == mprl_straight_log
    assert RunLog.load(tmp_path / "poses.csv") == mprl_straight_log


# -- metrics -----------------------------------------------------------------


def log_from(points, kind="goal"):
    log = RunLog("s", "p")
    for k, (x, y) in enumerate(points):
        log.poses.append(PoseSample(k, 2.0 * k, x, y, 0.0, 1.0))
    log.events.append(Event(len(points) - 1, 2.0 * (len(points) - 1), kind))
    return log


def test_hand_built_three_pose_log():
    cells = np.ones((32, 32), dtype=np.uint8)
    cells[:, 20] = OBSTACLE  # obstacle centres at x = 20 * 3.125 = 62.5
    grid = OccupancyGrid(cells, 3.125)
    # the ring of cells just outside the map also counts; its nearest centre to (31.25, 50) is 34.375 m away
    log = log_from([(31.25, 50.0), (40.0, 50.0), (52.5, 50.0)])
    m = compute_metrics(log, grid)
    assert m.path_length == pytest.approx(8.75 + 12.5, abs=1e-12)
    assert m.distances == pytest.approx((31.25, 22.5, 10.0), abs=1e-9)
    assert m.fraction_below(10.0) == 0.0
    assert m.fraction_below(10.0 + 1e-9) == pytest.approx(1 / 3)
    assert m.fraction_below(30.0) == pytest.approx(2 / 3)
    assert m.goal_reached and m.collision_count == 0
    assert m.summary()["min_obstacle_distance"] == pytest.approx(10.0)


def test_straight_line_path_length():
    pts = [(20.0 + x, 100.0) for x in np.linspace(0.0, 100.0, 51)]
    m = compute_metrics(log_from(pts), open_grid())
    assert m.path_length == pytest.approx(100.0, rel=0.01)


def test_far_from_obstacles_gives_zero_fraction():
    cells = np.ones((64, 64), dtype=np.uint8)
    cells[0, 0] = OBSTACLE
    m = compute_metrics(log_from([(100.0, 100.0), (120.0, 110.0)]), OccupancyGrid(cells, 3.125))
    assert m.fraction_below(10.0) == 0.0


def test_empty_log_rejected():
    with pytest.raises(ValueError):
        compute_metrics(RunLog("s", "p"), open_grid())


@given(xs=st.lists(st.floats(0.0, 100.0), min_size=2, max_size=20))
def test_fraction_below_nondecreasing(xs):
    m = compute_metrics(log_from([(90.0, 90.0), (30.0, 150.0), (5.0, 5.0)]), walled_scenario().grid)
    xs = sorted(xs)
    fr = [m.fraction_below(x) for x in xs]
    assert fr == sorted(fr) and 0.0 <= fr[0] and fr[-1] <= 1.0


# -- plots -------------------------------------------------------------------


def test_plot_single_log(tmp_path, straight, mprl_straight_log):
    written = emit_plot([mprl_straight_log], straight.grid, tmp_path / "p.svg", straight.goal)
    assert written == [tmp_path / "p.svg", tmp_path / "p_cdf.svg"]
    svg = (tmp_path / "p.svg").read_text()
    assert len(re.findall(r'id="run-\d+"', svg)) == 1


def test_plot_three_logs_have_three_lines_and_labels(tmp_path, straight, mprl_straight_log):
    logs = [replace(mprl_straight_log, planner=name) for name in ("mprl", "ppo", "frenet")]
    emit_plot(logs, straight.grid, tmp_path / "p.svg")
    svg = (tmp_path / "p.svg").read_text()
    assert sorted(re.findall(r'id="(run-\d+)"', svg)) == ["run-0", "run-1", "run-2"]
    for name in ("mprl", "ppo", "frenet"):
        assert svg.count(f"{name} (goal)") == 1


def test_plot_needs_logs(tmp_path, straight):
    with pytest.raises(ValueError):
        emit_plot([], straight.grid, tmp_path / "p.svg")


def test_plot_missing_directory(tmp_path, straight, mprl_straight_log):
    with pytest.raises(FileNotFoundError):
        emit_plot([mprl_straight_log], straight.grid, tmp_path / "nope" / "p.svg")


# -- scenarios ---------------------------------------------------------------


@pytest.mark.parametrize("name,builder", [("straight", build_scenario_straight), ("corner", build_scenario_corner)])
def test_committed_scenarios_match_builders(name, builder):
    built, loaded = builder(), load_scenario(name)
    assert np.array_equal(built.grid.cells, loaded.grid.cells)
    assert built.grid.cell_size == loaded.grid.cell_size
    assert built.start == loaded.start and built.goal == loaded.goal
    assert built.route == loaded.route
    assert built.env_cfg == loaded.env_cfg and built.ship == loaded.ship
    assert built.frenet == loaded.frenet and built.mprl == loaded.mprl
    assert built.frenet_route == loaded.frenet_route and built.frenet_override == loaded.frenet_override


def inflated_bfs(grid, start, goal, radius):
    """Independent corridor check: cells whose centre lies within ``radius`` of an obstacle centre are blocked."""
    obstacles = np.argwhere(grid.cells == OBSTACLE)
    r = int(math.ceil(radius / grid.cell_size))
    blocked = np.zeros(grid.cells.shape, dtype=bool)
    for dj in range(-r, r + 1):
        for di in range(-r, r + 1):
            if math.hypot(di, dj) * grid.cell_size <= radius:
                j = np.clip(obstacles[:, 0] + dj, 0, grid.height - 1)
                i = np.clip(obstacles[:, 1] + di, 0, grid.width - 1)
                blocked[j, i] = True
    s, g = world_to_cell(grid, start), world_to_cell(grid, goal)
    seen, queue = {s}, deque([s])
    while queue:
        i, j = queue.popleft()
        if (i, j) == g:
            return True
        for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= ni < grid.width and 0 <= nj < grid.height and not blocked[nj, ni] and (ni, nj) not in seen:
                seen.add((ni, nj))
                queue.append((ni, nj))
    return False


@pytest.mark.parametrize("name", ["straight", "corner"])
def test_scenarios_are_traversable(name):
    sc = load_scenario(name)
    start = (sc.start.x, sc.start.y)
    assert traversable(sc.grid, start, sc.goal, sc.footprint)
    assert inflated_bfs(sc.grid, start, sc.goal, sc.footprint.half_width)
    # a beam wider than the 60-cell channel cannot pass
    assert not inflated_bfs(sc.grid, start, sc.goal, 0.55 * 60 * sc.grid.cell_size)


def test_scenario_obstacle_counts(straight, corner):
    assert len(build_scenario_straight().obstacles) >= 4
    assert len(build_scenario_corner().obstacles) == 2
    # independent count from the committed raster: berthed vessels touch the quay, so count
    # maximal obstacle runs along a row just inside each quay wall
    cells = straight.grid.cells
    runs = sum(int(np.sum(np.diff((cells[row] == OBSTACLE).astype(int)) == 1)) for row in (2, -3))
    assert runs >= 4
    lo, hi = CORNER_CHANNEL
    g = corner.grid
    y, x = np.mgrid[0 : g.height, 0 : g.width] * g.cell_size
    inside_l = ((x < hi) & (y > lo) & (y < hi)) | ((x > lo) & (x < hi) & (y > lo))
    _, n = ndimage.label((g.cells == OBSTACLE) & inside_l)
    assert n == 2


def test_corner_turns_left(corner):
    route = corner.route.waypoints
    a, b, c = np.array(route[0]), np.array(route[len(route) // 2]), np.array(route[-1])
    first, last = b - a, c - b
    assert first[0] * last[1] - first[1] * last[0] > 0
    lo, hi = CORNER_CHANNEL
    assert lo < corner.start.y < hi and lo < corner.goal[0] < hi


def test_start_and_goal_are_free(straight, corner):
    for sc in (straight, corner):
        for p in ((sc.start.x, sc.start.y), sc.goal):
            i, j = world_to_cell(sc.grid, p)
            assert sc.grid.cells[j, i] == FREE


def test_committed_maps_are_plain_graymaps():
    for name in ("straight", "corner"):
        img = np.array(Image.open(DATA / f"{name}.pgm"))
        sc = load_scenario(name)
        assert np.array_equal(np.flipud(img >= 128), sc.grid.cells == 1) or np.array_equal(img >= 128, sc.grid.cells == 1)


def test_frenet_override_route_spacing(corner):
    pts = corner.with_frenet_override().route.waypoints
    gaps = [math.dist(a, b) for a, b in zip(pts, pts[1:])]
    assert all(g <= 30.0 + 1e-9 for g in gaps)
    assert all(g >= 15.0 - 1e-9 for g in gaps[:-1])
    with pytest.raises(ValueError):
        load_scenario("straight").with_frenet_override()


def test_missing_scenario_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "nope.json")
    doc = json.loads((DATA / "scenario_straight.json").read_text())
    doc["map"]["file"] = "missing.pgm"
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "s.json")


def test_scenario_with_blocked_start_rejected(tmp_path):
    doc = json.loads((DATA / "scenario_straight.json").read_text())
    doc["map"]["file"] = str(DATA / "straight.pgm")
    doc["ship_params"] = str(DATA / "ship_default.txt")
    doc["start"] = {"x": 0.0, "y": 0.0, "heading": 0.0}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_scenario(tmp_path / "s.json")


# -- CLI ---------------------------------------------------------------------


def test_cli_run_writes_outputs(tmp_path, capsys):
    assert cli.main(["run", "--scenario", "straight", "--planner", "mprl", "--out", str(tmp_path)]) == 0
    for f in ("poses.csv", "events.csv", "waypoints.csv", "metrics.json", "paths.svg", "paths_cdf.svg"):
        assert (tmp_path / f).exists()
    summary = json.loads((tmp_path / "metrics.json").read_text())
    assert summary["status"] == "goal" and summary["collision_count"] == 0
    assert "status=goal" in capsys.readouterr().out


def test_cli_handover_exits_zero(tmp_path):
    assert cli.main(["run", "--scenario", "corner", "--planner", "frenet", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["status"] == "handover"


def test_cli_compare_matches_recomputed_metrics(tmp_path, straight):
    assert cli.main(["compare", "--scenario", "straight", "--planners", "mprl,frenet", "--out", str(tmp_path)]) == 0
    with (tmp_path / "metrics.csv").open() as fh:
        rows = {r["planner"]: r for r in csv.DictReader(fh)}
    assert set(rows) == {"mprl", "frenet"}
    for name, row in rows.items():
        m = compute_metrics(RunLog.load(tmp_path / name), straight.grid).summary()
        assert float(row["fraction_below_10m"]) == m["fraction_below_10m"]
        assert float(row["path_length"]) == m["path_length"]
        assert row["status"] == m["status"] == "goal"
    assert float(rows["mprl"]["fraction_below_10m"]) < float(rows["frenet"]["fraction_below_10m"])
    svg = (tmp_path / "paths.svg").read_text()
    assert len(re.findall(r'id="run-\d+"', svg)) == 2


def test_cli_unknown_planner(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--scenario", "straight", "--planner", "astar"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err
    assert cli.main(["compare", "--scenario", "straight", "--planners", "mprl,astar", "--out", "x"]) == 1


def test_cli_missing_file(tmp_path, capsys):
    assert cli.main(["run", "--scenario", str(tmp_path / "none.json"), "--planner", "mprl"]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("mprlnav: error:") and "\n" not in err


def test_cli_plot(tmp_path, mprl_straight_log, capsys):
    mprl_straight_log.save(tmp_path / "log")
    out = tmp_path / "fig.svg"
    assert cli.main(["plot", "--log", str(tmp_path / "log"), "--map", str(DATA / "scenario_straight.json"), "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "fig_cdf.svg").exists()
    assert cli.main(["plot", "--log", str(tmp_path / "log"), "--map", str(DATA / "straight.pgm"), "--out", str(tmp_path / "g.svg")]) == 0


def test_cli_route(capsys):
    fixture = str(DATA / "overpass_fixture.json")
    assert cli.main(["route", "--fixture", fixture, "--from", "101", "--to", "110"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "nodes,101,102,103,104,105,110"
    assert lines[1] == "index,x,y"
    assert lines[2] == "0,0.000,0.000"
    assert cli.main(["route", "--fixture", fixture, "--from", "101", "--to", "999999"]) == 1
