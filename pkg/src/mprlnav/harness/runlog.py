"""Run logs: per-step poses, waypoint batches and events, persisted as CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

TERMINAL_EVENTS = ("goal", "collision", "handover", "timeout")


@dataclass(frozen=True)
class PoseSample:
    step: int
    t: float
    x: float
    y: float
    heading: float
    speed: float


@dataclass(frozen=True)
class Event:
    step: int
    t: float
    kind: str
    detail: str = ""


@dataclass
class RunLog:
    scenario: str
    planner: str
    poses: list[PoseSample] = field(default_factory=list)
    waypoints: list[tuple[int, float, tuple[tuple[float, float], ...]]] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)

    @property
    def terminal(self) -> Event | None:
        for ev in reversed(self.events):
            if ev.kind in TERMINAL_EVENTS:
                return ev
        return None

    @property
    def status(self) -> str:
        ev = self.terminal
        return ev.kind if ev else "running"

    def count(self, kind: str) -> int:
        return sum(1 for ev in self.events if ev.kind == kind)

    def xy(self) -> list[tuple[float, float]]:
        return [(p.x, p.y) for p in self.poses]

    # -- persistence -------------------------------------------------------

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "poses.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "x", "y", "heading", "speed"])
            for p in self.poses:
                w.writerow([p.step, repr(p.t), repr(p.x), repr(p.y), repr(p.heading), repr(p.speed)])
        with (out / "events.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "kind", "detail"])
            for ev in self.events:
                w.writerow([ev.step, repr(ev.t), ev.kind, ev.detail])
        with (out / "waypoints.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch", "step", "t", "index", "x", "y"])
            for b, (step, t, pts) in enumerate(self.waypoints):
                for k, (x, y) in enumerate(pts):
                    w.writerow([b, step, repr(t), k, repr(x), repr(y)])
        (out / "run.json").write_text(json.dumps({"scenario": self.scenario, "planner": self.planner}))

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        """Read a log directory (or the ``poses.csv`` inside one)."""
        root = Path(path)
        if root.is_file():
            root = root.parent
        meta = {"scenario": "", "planner": ""}
        if (root / "run.json").exists():
            meta.update(json.loads((root / "run.json").read_text()))
        log = cls(meta["scenario"], meta["planner"])
        with (root / "poses.csv").open() as fh:
            for row in csv.DictReader(fh):
                log.poses.append(
                    PoseSample(int(row["step"]), float(row["t"]), float(row["x"]), float(row["y"]),
                               float(row["heading"]), float(row["speed"]))
                )
        if (root / "events.csv").exists():
            with (root / "events.csv").open() as fh:
                for row in csv.DictReader(fh):
                    log.events.append(Event(int(row["step"]), float(row["t"]), row["kind"], row["detail"]))
        if (root / "waypoints.csv").exists():
            batches: dict[int, tuple[int, float, list]] = {}
            with (root / "waypoints.csv").open() as fh:
                for row in csv.DictReader(fh):
                    b = int(row["batch"])
                    batches.setdefault(b, (int(row["step"]), float(row["t"]), []))[2].append(
                        (float(row["x"]), float(row["y"]))
                    )
            log.waypoints = [(s, t, tuple(pts)) for s, t, pts in (batches[b] for b in sorted(batches))]
        return log
