"""Waterway graph routing: Overpass-style data, Dijkstra, arc-length waypoints."""

from __future__ import annotations

import heapq
import json
import math
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

EARTH_RADIUS = 6371000.0
WATERWAY_KINDS = ("river", "canal")
DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"

Point = tuple[float, float]
NodeId = Hashable


class FetchError(RuntimeError):
    """The waterway service could not be reached."""


class MalformedResponse(ValueError):
    """The waterway service answered with something that is not an element list."""


class NoRoute(ValueError):
    pass


@dataclass(frozen=True)
class Way:
    id: int
    node_ids: tuple[int, ...]
    tags: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class WaterwayData:
    ways: tuple[Way, ...]
    nodes: Mapping[int, tuple[float, float]]  # id -> (lat, lon)

    @property
    def empty(self) -> bool:
        return not self.ways


# --------------------------------------------------------------------------
# Data ingestion


def overpass_query(bbox: Sequence[float], timeout: int = 25) -> str:
    """Overpass QL selecting river and canal ways inside ``(south, west, north, east)``."""
    s, w, n, e = bbox
    box = f"({s},{w},{n},{e})"
    parts = "".join(f'way["waterway"="{kind}"]{box};' for kind in WATERWAY_KINDS)
    return f"[out:json][timeout:{timeout}];({parts});(._;>;);out body;"


def parse_waterways(raw: bytes) -> WaterwayData:
    try:
        doc = json.loads(raw)
        elements = doc["elements"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"not an Overpass JSON document: {exc}") from exc
    if not isinstance(elements, list):
        raise MalformedResponse("'elements' is not a list")

    nodes: dict[int, tuple[float, float]] = {}
    ways: list[Way] = []
    try:
        for el in elements:
            kind = el.get("type")
            if kind == "node":
                nodes[int(el["id"])] = (float(el["lat"]), float(el["lon"]))
            elif kind == "way":
                tags = dict(el.get("tags", {}))
                if tags.get("waterway") in WATERWAY_KINDS:
                    ways.append(Way(int(el["id"]), tuple(int(n) for n in el["nodes"]), tags))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"bad element: {exc}") from exc

    used = {n for w in ways for n in w.node_ids}
    missing = used - nodes.keys()
    if missing:
        raise MalformedResponse(f"ways reference unknown nodes {sorted(missing)[:5]}")
    ways.sort(key=lambda w: w.id)
    return WaterwayData(tuple(ways), {n: nodes[n] for n in sorted(used)})


def fetch_waterways(
    bbox: Sequence[float],
    endpoint: str | Path = DEFAULT_ENDPOINT,
    *,
    timeout: float = 30.0,
    record_to: str | Path | None = None,
) -> WaterwayData:
    """Query river/canal ways in ``bbox`` from a live endpoint or a fixture file.

    ``endpoint`` is either an HTTP(S) URL or a path to a stored raw response.
    When ``record_to`` is given the raw live response is written there verbatim,
    so it can be replayed later as a fixture.
    """
    s, w, n, e = bbox
    if not (-90 <= s < n <= 90 and -180 <= w < e <= 180):
        raise ValueError(f"invalid bounding box {tuple(bbox)}")
    endpoint_str = str(endpoint)
    if endpoint_str.startswith(("http://", "https://")):
        body = urllib.parse.urlencode({"data": overpass_query(bbox)}).encode()
        try:
            with urllib.request.urlopen(endpoint_str, data=body, timeout=timeout) as resp:
                raw = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise FetchError(f"waterway query failed: {exc}") from exc
        if record_to is not None:
            Path(record_to).write_bytes(raw)
    else:
        path = Path(endpoint_str.removeprefix("file://"))
        if not path.exists():
            raise FetchError(f"fixture {path} not found")
        raw = path.read_bytes()
    return parse_waterways(raw)


def project_latlon(
    data: WaterwayData | Mapping[int, tuple[float, float]], reference: Sequence[float]
) -> dict[int, Point]:
    """Equirectangular projection of (lat, lon) nodes to metres around ``reference``."""
    nodes = data.nodes if isinstance(data, WaterwayData) else data
    lat0, lon0 = reference
    coslat = math.cos(math.radians(lat0))
    out: dict[int, Point] = {}
    for nid, (lat, lon) in nodes.items():
        dlat, dlon = lat - lat0, lon - lon0
        if abs(dlat) > 1.0 or abs(dlon) > 1.0:
            raise ValueError(f"node {nid} is more than 1 degree from the reference")
        out[nid] = (
            EARTH_RADIUS * math.radians(dlon) * coslat,
            EARTH_RADIUS * math.radians(dlat),
        )
    return out


# --------------------------------------------------------------------------
# Graph


@dataclass(frozen=True)
class WaterwayGraph:
    nodes: Mapping[NodeId, Point]
    adjacency: Mapping[NodeId, Mapping[NodeId, float]]

    @property
    def edges(self) -> list[tuple[NodeId, NodeId, float]]:
        seen = set()
        out = []
        for a in sorted(self.adjacency):
            for b, cost in sorted(self.adjacency[a].items()):
                key = frozenset((a, b))
                if key not in seen:
                    seen.add(key)
                    out.append((a, b, cost))
        return out

    def degree(self, nid: NodeId) -> int:
        return len(self.adjacency.get(nid, {}))

    def nearest_node(self, p: Sequence[float]) -> NodeId:
        return min(
            self.nodes,
            key=lambda n: (math.hypot(self.nodes[n][0] - p[0], self.nodes[n][1] - p[1]), n),
        )

    def path_cost(self, path: Sequence[NodeId]) -> float:
        return sum(self.adjacency[a][b] for a, b in zip(path, path[1:]))


def build_graph(
    nodes: Mapping[NodeId, Sequence[float]], ways: Iterable[Sequence[NodeId] | Way]
) -> WaterwayGraph:
    """Connect consecutive way members with Euclidean-cost undirected edges."""
    adjacency: dict[NodeId, dict[NodeId, float]] = {}
    used: set[NodeId] = set()
    for way in ways:
        ids = way.node_ids if isinstance(way, Way) else tuple(way)
        if len(ids) < 2:
            raise ValueError("every way needs at least two nodes")
        for a, b in zip(ids, ids[1:]):
            if a not in nodes or b not in nodes:
                raise KeyError(f"way references unknown node {a if a not in nodes else b!r}")
            cost = math.hypot(nodes[b][0] - nodes[a][0], nodes[b][1] - nodes[a][1])
            if a == b or cost <= 0.0:
                raise ValueError(f"zero-length edge between {a!r} and {b!r}")
            adjacency.setdefault(a, {})[b] = cost
            adjacency.setdefault(b, {})[a] = cost
            used.update((a, b))
    points = {n: (float(nodes[n][0]), float(nodes[n][1])) for n in sorted(used)}
    return WaterwayGraph(points, {n: dict(sorted(adjacency[n].items())) for n in sorted(adjacency)})


def dijkstra(graph: WaterwayGraph, src: NodeId, dst: NodeId) -> list[NodeId]:
    """Minimum-cost node path; equal-cost paths resolve to the lexicographically smallest."""
    if src not in graph.nodes or dst not in graph.nodes:
        raise KeyError(f"unknown node {src if src not in graph.nodes else dst!r}")
    best: dict[NodeId, tuple[float, tuple]] = {src: (0.0, (src,))}
    heap: list[tuple[float, tuple]] = [(0.0, (src,))]
    done: set[NodeId] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return list(path)
        for v, w in graph.adjacency.get(u, {}).items():
            if v in done:
                continue
            label = (cost + w, path + (v,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, label)
    raise NoRoute(f"{dst!r} is unreachable from {src!r}")


# --------------------------------------------------------------------------
# Waypoints


@dataclass(frozen=True)
class GlobalRoute:
    waypoints: tuple[Point, ...]
    min_spacing: float
    max_spacing: float

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.waypoints, self.waypoints[1:]))


def resample_route(
    path_points: Sequence[Sequence[float]],
    min_spacing: float,
    max_spacing: float,
    start: Sequence[float],
    goal: Sequence[float],
) -> GlobalRoute:
    """Place waypoints at uniform arc length along start -> node path -> goal."""
    if not 0 < min_spacing < max_spacing:
        raise ValueError("need 0 < min_spacing < max_spacing")
    if not path_points:
        raise ValueError("node path is empty")
    poly: list[Point] = []
    for p in [start, *path_points, goal]:
        q = (float(p[0]), float(p[1]))
        if not poly or q != poly[-1]:
            poly.append(q)
    start_pt, goal_pt = poly[0], (float(goal[0]), float(goal[1]))
    seglen = [math.dist(a, b) for a, b in zip(poly, poly[1:])]
    total = sum(seglen)
    if total == 0.0:
        if start_pt != goal_pt:
            raise ValueError("zero-length route between distinct start and goal")
        return GlobalRoute((start_pt,), min_spacing, max_spacing)

    spacing = min(max_spacing, max(min_spacing, total / math.ceil(total / max_spacing)))
    tol = 1e-9 * total
    waypoints = [start_pt]
    k = 1
    seg, seg_start = 0, 0.0
    while k * spacing < total - tol:
        s = k * spacing
        while seg_start + seglen[seg] < s:
            seg_start += seglen[seg]
            seg += 1
        t = (s - seg_start) / seglen[seg]
        a, b = poly[seg], poly[seg + 1]
        waypoints.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
        k += 1
    waypoints.append(goal_pt)
    return GlobalRoute(tuple(waypoints), min_spacing, max_spacing)


def plan_route(
    graph: WaterwayGraph,
    start: Sequence[float],
    goal: Sequence[float],
    min_spacing: float = 150.0,
    max_spacing: float = 200.0,
) -> GlobalRoute:
    """Snap start and goal to their nearest nodes, route between them and resample."""
    path = dijkstra(graph, graph.nearest_node(start), graph.nearest_node(goal))
    return resample_route([graph.nodes[n] for n in path], min_spacing, max_spacing, start, goal)
