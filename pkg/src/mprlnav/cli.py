"""Command-line entry point: ``mprlnav {run,train,compare,plot,route}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .agent.baseline import OpenWaterTask, evaluate_goal_rate
from .agent.ppo import PpoConfig, train
from .globalplan import MalformedResponse, NoRoute, build_graph, dijkstra, fetch_waterways, project_latlon, resample_route
from .gridmap import load_grid
from .harness.metrics import compute_metrics
from .harness.planners import PLANNERS
from .harness.plotting import emit_plot
from .harness.runlog import RunLog
from .harness.runner import make_planner, run_episode
from .harness.scenarios import Scenario, data_dir, dataclass_from_dict, load_scenario
from .simenv import EnvConfig

METRIC_COLUMNS = (
    "planner",
    "status",
    "goal_reached",
    "collision_count",
    "handover_count",
    "path_length",
    "fraction_below_10m",
    "min_obstacle_distance",
    "samples",
    "runtime",
)


class CliError(Exception):
    """Expected failure reported as a one-line message and exit code 1."""


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        sc = replace(sc, seed=args.seed)
    if getattr(args, "frenet_override", False):
        sc = sc.with_frenet_override()
    return sc


def _default_checkpoint(args) -> Path | None:
    if args.checkpoint:
        return Path(args.checkpoint)
    bundled = data_dir() / "ppo_open_water.ckpt"
    return bundled if bundled.exists() else None


def _run_one(sc: Scenario, name: str, args, out: Path | None) -> tuple[RunLog, dict]:
    planner = make_planner(name, sc, checkpoint=_default_checkpoint(args), workers=args.workers)
    t0 = time.perf_counter()
    run_log = run_episode(sc, planner)
    runtime = time.perf_counter() - t0
    summary = {"scenario": sc.name, "planner": name, "seed": sc.seed}
    summary.update(compute_metrics(run_log, sc.grid, runtime).summary())
    if out is not None:
        run_log.save(out)
        (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    return run_log, summary


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    run_log, summary = _run_one(sc, args.planner, args, out)
    if out is not None:
        emit_plot([run_log], sc.grid, out / "paths.svg", sc.goal)
    print(
        f"status={summary['status']} planner={args.planner} scenario={sc.name} "
        f"collisions={summary['collision_count']} fraction_below_10m={summary['fraction_below_10m']:.3f} "
        f"runtime={summary['runtime']:.1f}s"
    )
    return 0


def cmd_compare(args) -> int:
    sc = _scenario(args)
    names = [n.strip() for n in args.planners.split(",") if n.strip()]
    unknown = [n for n in names if n not in PLANNERS]
    if not names or unknown:
        raise CliError(f"unknown planner(s) {unknown or names}; expected from {', '.join(PLANNERS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logs, rows = [], []
    for name in names:
        run_log, summary = _run_one(sc, name, args, out / name)
        logs.append(run_log)
        rows.append(summary)
        print(f"{name}: status={summary['status']} fraction_below_10m={summary['fraction_below_10m']:.3f}")
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    emit_plot(logs, sc.grid, out / "paths.svg", sc.goal)
    return 0


def load_train_config(path: str | Path) -> tuple[PpoConfig, OpenWaterTask, int]:
    doc = json.loads(Path(path).read_text())
    ppo = dataclass_from_dict(PpoConfig, doc.get("ppo"))
    task_doc = dict(doc.get("task", {}))
    env = dataclass_from_dict(EnvConfig, task_doc.pop("env", None), OpenWaterTask().cfg)
    task = dataclass_from_dict(OpenWaterTask, task_doc, OpenWaterTask(cfg=env))
    return ppo, task, int(doc.get("eval_episodes", 50))


def cmd_train(args) -> int:
    path = Path(args.config)
    if not path.exists() and (data_dir() / path).exists():
        path = data_dir() / path
    if not path.exists():
        raise FileNotFoundError(f"training config {path} not found")
    cfg, task, episodes = load_train_config(path)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        task = replace(task, seed=args.seed)
    out = Path(args.out)
    t0 = time.perf_counter()
    result = train(task.make_env, cfg, out)
    elapsed = time.perf_counter() - t0
    rate = evaluate_goal_rate(result.params, task, episodes)
    report = {"seed": cfg.seed, "env_steps": cfg.max_env_steps, "train_seconds": elapsed,
              "eval_episodes": episodes, "goal_rate": rate}
    (out / "eval.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"goal_rate={rate:.2f} episodes={episodes} seed={cfg.seed} train_seconds={elapsed:.0f}")
    return 0


def cmd_plot(args) -> int:
    map_path = Path(args.map)
    if not map_path.exists():
        raise FileNotFoundError(f"map {map_path} not found")
    goal = None
    if map_path.suffix == ".json":
        sc = load_scenario(map_path)
        grid, goal = sc.grid, sc.goal
    else:
        grid = load_grid(map_path.read_bytes(), args.cell_size)
    logs = [RunLog.load(p) for p in args.log]
    written = emit_plot(logs, grid, args.out, goal)
    print(" ".join(str(p) for p in written))
    return 0


def cmd_route(args) -> int:
    data = fetch_waterways((-90.0, -180.0, 90.0, 180.0), args.fixture)
    if data.empty:
        raise NoRoute("fixture contains no river or canal ways")
    for nid in (args.from_id, args.to_id):
        if nid not in data.nodes:
            raise CliError(f"node {nid} is not on a waterway in the fixture")
    nodes = project_latlon(data, data.nodes[args.from_id])
    graph = build_graph(nodes, data.ways)
    path = dijkstra(graph, args.from_id, args.to_id)
    pts = [nodes[n] for n in path]
    route = resample_route(pts, args.min_spacing, args.max_spacing, pts[0], pts[-1])
    print("nodes," + ",".join(str(n) for n in path))
    print("index,x,y")
    for k, (x, y) in enumerate(route.waypoints):
        print(f"{k},{x:.3f},{y:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mprlnav", description="Waypoint planning for inland vessels on occupancy grids.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON (or a bundled name: straight, corner)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--checkpoint", help="PPO parameter checkpoint (defaults to the bundled one)")
        sp.add_argument("--workers", type=int, default=1, help="threads for MPRL candidate rollouts")
        sp.add_argument("--frenet-override", action="store_true",
                        help="use the scenario's dense route and alternative Frenet weights")

    sp = sub.add_parser("run", help="run one planner on a scenario")
    scenario_args(sp)
    sp.add_argument("--planner", required=True, choices=PLANNERS)
    sp.add_argument("--out", help="directory for the run log, metrics and plots")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run several planners and tabulate metrics")
    scenario_args(sp)
    sp.add_argument("--planners", required=True, help="comma-separated, e.g. mprl,frenet,ppo")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("train", help="train the PPO baseline in open water")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("plot", help="render saved run logs over a map")
    sp.add_argument("--log", required=True, action="append", help="run log directory or poses.csv (repeatable)")
    sp.add_argument("--map", required=True, help="PGM map or scenario JSON")
    sp.add_argument("--cell-size", type=float, default=3.125)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("route", help="global route between two waterway nodes of a stored Overpass response")
    sp.add_argument("--fixture", required=True)
    sp.add_argument("--from", dest="from_id", type=int, required=True)
    sp.add_argument("--to", dest="to_id", type=int, required=True)
    sp.add_argument("--min-spacing", type=float, default=150.0)
    sp.add_argument("--max-spacing", type=float, default=200.0)
    sp.set_defaults(func=cmd_route)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError, MalformedResponse, NoRoute, OSError) as exc:
        print(f"mprlnav: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
