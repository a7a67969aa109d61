"""Scenario definitions, JSON persistence and the two built-in waterway layouts."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..dynamics import ShipParams, format_ship_params, load_ship_params
from ..frenet import FrenetConfig
from ..globalplan import GlobalRoute, build_graph, plan_route
from ..gridmap import FREE, OBSTACLE, Footprint, OccupancyGrid, load_grid, swept_collision, write_pgm
from ..mprl import MprlConfig
from ..simenv import EnvConfig, Pose

CELL_SIZE = 3.125
DATA_ENV = "MPRLNAV_DATA"


def data_dir() -> Path:
    """Directory holding maps, scenario files and fixtures (``MPRLNAV_DATA`` overrides)."""
    override = os.environ.get(DATA_ENV)
    return Path(override) if override else Path(__file__).resolve().parent.parent / "data"


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    grid: OccupancyGrid
    start: Pose
    goal: tuple[float, float]
    route: GlobalRoute
    env_cfg: EnvConfig
    ship: ShipParams = ShipParams()
    mprl: MprlConfig = MprlConfig()
    frenet: FrenetConfig = FrenetConfig()
    frenet_route: GlobalRoute | None = None
    frenet_override: FrenetConfig | None = None
    safety_margin: float = 2.0
    accept_radius: float = 10.0
    cruise_speed: float = 2.0
    max_steps: int = 400
    seed: int = 0
    obstacles: tuple[tuple[float, float, float, float], ...] = ()
    graph: dict | None = field(default=None, repr=False)

    @property
    def footprint(self) -> Footprint:
        return Footprint(self.ship.length, self.ship.width, self.safety_margin)

    def route_for(self, planner: str) -> GlobalRoute:
        return self.route

    def with_frenet_override(self) -> "Scenario":
        """Variant using the dense global route and the alternative Frenet weights."""
        if self.frenet_route is None:
            raise ValueError(f"scenario {self.name} has no Frenet override")
        return replace(
            self,
            name=self.name + "-frenet-override",
            route=self.frenet_route,
            frenet=self.frenet_override or self.frenet,
        )


# --------------------------------------------------------------------------
# Geometry helpers


def _rect_cells(cells: np.ndarray, x0: float, x1: float, y0: float, y1: float) -> None:
    """Mark every cell whose centre lies in the world box as obstacle."""
    i0 = math.ceil(x0 / CELL_SIZE)
    i1 = math.floor(x1 / CELL_SIZE)
    j0 = math.ceil(y0 / CELL_SIZE)
    j1 = math.floor(y1 / CELL_SIZE)
    cells[max(j0, 0) : j1 + 1, max(i0, 0) : i1 + 1] = OBSTACLE


def _route_from_centerline(
    nodes: dict[int, tuple[float, float]], start, goal, lo: float, hi: float
) -> tuple[GlobalRoute, dict]:
    ids = sorted(nodes)
    graph = build_graph(nodes, [ids])
    route = plan_route(graph, start, goal, lo, hi)
    spec = {"nodes": {str(k): list(v) for k, v in nodes.items()}, "ways": [ids]}
    return route, spec


def traversable(grid: OccupancyGrid, start: Sequence[float], goal: Sequence[float], fp: Footprint) -> bool:
    """Breadth-first search over cells whose disc-inflated footprint is free.

    Cells are inflated by the footprint half-width: a corridor at least one
    ship beam (plus margins) wide must connect start and goal.
    """
    from collections import deque

    from scipy.ndimage import binary_dilation

    r = int(math.ceil(fp.half_width / grid.cell_size))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disc = (xx**2 + yy**2) * grid.cell_size**2 <= (fp.half_width + 0.5 * grid.cell_size) ** 2
    padded = np.pad(grid.cells == OBSTACLE, r, constant_values=True)
    blocked = binary_dilation(padded, structure=disc)[r:-r, r:-r]

    def cell(p):
        return (
            math.floor((p[1] - grid.origin[1]) / grid.cell_size + 0.5),
            math.floor((p[0] - grid.origin[0]) / grid.cell_size + 0.5),
        )

    s, g = cell(start), cell(goal)
    if blocked[s] or blocked[g]:
        return False
    seen = np.zeros_like(blocked)
    seen[s] = True
    queue = deque([s])
    while queue:
        j, i = queue.popleft()
        if (j, i) == g:
            return True
        for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nj, ni = j + dj, i + di
            if 0 <= nj < blocked.shape[0] and 0 <= ni < blocked.shape[1] and not blocked[nj, ni] and not seen[nj, ni]:
                seen[nj, ni] = True
                queue.append((nj, ni))
    return False


# --------------------------------------------------------------------------
# Built-in scenarios

STRAIGHT_WIDTH = 400  # cells along x
STRAIGHT_HEIGHT = 64  # 60 water cells between two 2-cell quay walls
# berthed vessels as world boxes (x0, x1, y0, y1); the first, fourth and fifth cross the centreline
STRAIGHT_OBSTACLES = (
    (115.0, 185.0, 0.0, 115.0),
    (300.0, 370.0, 120.0, 200.0),
    (490.0, 560.0, 0.0, 88.0),
    (675.0, 760.0, 82.0, 200.0),
    (870.0, 940.0, 0.0, 115.0),
)


def build_scenario_straight() -> Scenario:
    cells = np.full((STRAIGHT_HEIGHT, STRAIGHT_WIDTH), FREE, dtype=np.uint8)
    cells[:2, :] = OBSTACLE
    cells[-2:, :] = OBSTACLE
    for box in STRAIGHT_OBSTACLES:
        _rect_cells(cells, *box)
    grid = OccupancyGrid(cells, CELL_SIZE)
    center_y = 0.5 * (STRAIGHT_HEIGHT - 1) * CELL_SIZE
    start = Pose(60.0, center_y, 0.0)
    goal = (1190.0, center_y)
    xs = np.linspace(start.x, goal[0], 10)
    nodes = {k + 1: (float(x), center_y) for k, x in enumerate(xs)}
    route, graph = _route_from_centerline(nodes, (start.x, start.y), goal, 150.0, 200.0)
    env_cfg = EnvConfig(
        d_max=1.5 * math.dist((start.x, start.y), goal), w_h=0.01, max_steps=1000
    )
    return Scenario(
        name="straight",
        grid=grid,
        start=start,
        goal=goal,
        route=route,
        env_cfg=env_cfg,
        obstacles=STRAIGHT_OBSTACLES,
        graph={"graph": graph, "min_spacing": 150.0, "max_spacing": 200.0},
    )


CORNER_SIZE = 256  # cells, square map
CORNER_CHANNEL = (250.0, 350.0)  # water band: y-range of the first leg, x-range of the second
# one on the south bank before the turn, one on the inner bank just after it
CORNER_OBSTACLES = (
    (170.0, 230.0, 250.0, 285.0),
    (250.0, 320.0, 380.0, 440.0),
)


def build_scenario_corner() -> Scenario:
    lo, hi = CORNER_CHANNEL
    # stamp the water as "obstacle" on a free canvas, then invert
    water = np.full((CORNER_SIZE, CORNER_SIZE), FREE, dtype=np.uint8)
    _rect_cells(water, 0.0, hi, lo, hi)  # eastbound leg
    _rect_cells(water, lo, hi, lo, CORNER_SIZE * CELL_SIZE)  # northbound leg after a left turn
    cells = np.where(water == OBSTACLE, FREE, OBSTACLE).astype(np.uint8)
    for box in CORNER_OBSTACLES:
        _rect_cells(cells, *box)
    grid = OccupancyGrid(cells, CELL_SIZE)
    mid = 0.5 * (lo + hi)
    start = Pose(30.0, mid, 0.0)
    goal = (mid, 770.0)
    nodes = {1: (start.x, mid), 2: (150.0, mid), 3: (mid, mid), 4: (mid, 450.0), 5: (mid, 600.0), 6: goal}
    route, graph = _route_from_centerline(nodes, (start.x, start.y), goal, 150.0, 200.0)
    dense, _ = _route_from_centerline(nodes, (start.x, start.y), goal, 15.0, 30.0)
    env_cfg = EnvConfig(d_max=1.5 * math.dist((start.x, start.y), goal), w_h=0.01, max_steps=1000)
    return Scenario(
        name="corner",
        grid=grid,
        start=start,
        goal=goal,
        route=route,
        env_cfg=env_cfg,
        frenet_route=dense,
        frenet_override=FrenetConfig(
            k_delta=0.2,
            corridor=30.0,
            delta_end_grid=(-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0),
        ),
        obstacles=CORNER_OBSTACLES,
        graph={"graph": graph, "min_spacing": 150.0, "max_spacing": 200.0},
    )


BUILDERS = {"straight": build_scenario_straight, "corner": build_scenario_corner}


# --------------------------------------------------------------------------
# JSON persistence


def dataclass_to_dict(obj) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(obj), default=list))


def dataclass_from_dict(cls, data: dict | None, base=None):
    base = base if base is not None else cls()
    if not data:
        return base
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k, v in data.items():
        if k not in names:
            raise ValueError(f"unknown {cls.__name__} field {k!r}")
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    return replace(base, **kwargs)


def _route_to_json(route: GlobalRoute) -> dict:
    return {
        "waypoints": [list(p) for p in route.waypoints],
        "min_spacing": route.min_spacing,
        "max_spacing": route.max_spacing,
    }


def _route_from_json(spec: dict, start, goal) -> GlobalRoute:
    if "waypoints" in spec:
        return GlobalRoute(
            tuple((float(x), float(y)) for x, y in spec["waypoints"]),
            float(spec.get("min_spacing", 150.0)),
            float(spec.get("max_spacing", 200.0)),
        )
    g = spec["graph"]
    nodes = {int(k): (float(v[0]), float(v[1])) for k, v in g["nodes"].items()}
    graph = build_graph(nodes, [[int(n) for n in way] for way in g["ways"]])
    return plan_route(graph, start, goal, float(spec["min_spacing"]), float(spec["max_spacing"]))


def scenario_to_json(sc: Scenario, map_file: str, ship_file: str | None = None) -> dict:
    doc: dict[str, Any] = {
        "name": sc.name,
        "map": {"file": map_file, "cell_size": sc.grid.cell_size, "origin": list(sc.grid.origin)},
        "start": {"x": sc.start.x, "y": sc.start.y, "heading": sc.start.heading},
        "goal": list(sc.goal),
        "route": sc.graph if sc.graph is not None else _route_to_json(sc.route),
        "env": dataclass_to_dict(sc.env_cfg),
        "ship_params": ship_file,
        "safety_margin": sc.safety_margin,
        "accept_radius": sc.accept_radius,
        "cruise_speed": sc.cruise_speed,
        "max_steps": sc.max_steps,
        "seed": sc.seed,
        "planners": {
            "mprl": {k: v for k, v in dataclass_to_dict(sc.mprl).items() if k != "workers"},
            "frenet": dataclass_to_dict(sc.frenet),
        },
    }
    if sc.frenet_route is not None:
        doc["frenet_override"] = {
            "route": _route_to_json(sc.frenet_route),
            "config": dataclass_to_dict(sc.frenet_override or sc.frenet),
        }
    return doc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        candidate = data_dir() / path
        if candidate.exists():
            path = candidate
        elif (data_dir() / f"scenario_{path}.json").exists():
            path = data_dir() / f"scenario_{path}.json"
        else:
            raise FileNotFoundError(f"scenario file {path} not found")
    doc = json.loads(path.read_text())
    root = path.parent
    m = doc["map"]
    map_path = root / m["file"]
    if not map_path.exists():
        raise FileNotFoundError(f"map file {map_path} not found")
    grid = load_grid(map_path.read_bytes(), float(m["cell_size"]), tuple(m.get("origin", (0.0, 0.0))))
    ship = ShipParams()
    if doc.get("ship_params"):
        ship_path = root / doc["ship_params"]
        if not ship_path.exists():
            raise FileNotFoundError(f"ship parameter file {ship_path} not found")
        ship = load_ship_params(ship_path)
    st = doc["start"]
    start = Pose(float(st["x"]), float(st["y"]), float(st.get("heading", 0.0)))
    goal = (float(doc["goal"][0]), float(doc["goal"][1]))
    planners = doc.get("planners", {})
    frenet = dataclass_from_dict(FrenetConfig, planners.get("frenet"))
    override = doc.get("frenet_override")
    sc = Scenario(
        name=doc["name"],
        grid=grid,
        start=start,
        goal=goal,
        route=_route_from_json(doc["route"], (start.x, start.y), goal),
        env_cfg=dataclass_from_dict(EnvConfig, doc.get("env")),
        ship=ship,
        mprl=dataclass_from_dict(MprlConfig, planners.get("mprl")),
        frenet=frenet,
        frenet_route=_route_from_json(override["route"], (start.x, start.y), goal) if override else None,
        frenet_override=dataclass_from_dict(FrenetConfig, override.get("config")) if override else None,
        safety_margin=float(doc.get("safety_margin", 2.0)),
        accept_radius=float(doc.get("accept_radius", 10.0)),
        cruise_speed=float(doc.get("cruise_speed", 2.0)),
        max_steps=int(doc.get("max_steps", 400)),
        seed=int(doc.get("seed", 0)),
        graph=doc["route"] if "graph" in doc["route"] else None,
    )
    validate_scenario(sc)
    return sc


def validate_scenario(sc: Scenario) -> None:
    fp = sc.footprint
    pose = (sc.start.x, sc.start.y, sc.start.heading)
    if swept_collision(sc.grid, pose, pose[:2], fp):
        raise ValueError(f"scenario {sc.name}: start pose is not in free space")
    goal_pose = (sc.goal[0], sc.goal[1], 0.0)
    if swept_collision(sc.grid, goal_pose, sc.goal, Footprint(fp.width, fp.width, fp.safety_margin)):
        raise ValueError(f"scenario {sc.name}: goal is not in free space")
    if sc.env_cfg.max_steps < sc.max_steps:
        raise ValueError(f"scenario {sc.name}: env max_steps must cover the episode cap")


def write_scenario_files(sc: Scenario, out_dir: str | Path) -> Path:
    """Freeze a built scenario as ``<name>.pgm``, ``ship_default.txt`` and ``scenario_<name>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{sc.name}.pgm").write_bytes(write_pgm(sc.grid))
    (out / "ship_default.txt").write_text(format_ship_params(sc.ship))
    doc = scenario_to_json(sc, f"{sc.name}.pgm", "ship_default.txt")
    target = out / f"scenario_{sc.name}.json"
    target.write_text(json.dumps(doc, indent=2) + "\n")
    return target
