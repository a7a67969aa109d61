"""Binary occupancy-grid world model.

Cells hold 1 for navigable water and 0 for an obstacle. Cell ``(i, j)`` is the
square of side ``cell_size`` centred on ``origin + (i, j) * cell_size``; ``i``
runs along world x and ``j`` along world y, so ``cells[j, i]`` is the value of
that cell and row 0 of the array is the southernmost row.
"""

from __future__ import annotations

import math
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

FREE = 1
OBSTACLE = 0


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    cells: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise ValueError(f"grid must be a non-empty 2D array, got shape {cells.shape}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if np.any(cells > 1):
            raise ValueError("cells must be 0 (obstacle) or 1 (free)")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """World bounds ``(xmin, xmax, ymin, ymax)`` covered by the cells."""
        half = 0.5 * self.cell_size
        ox, oy = self.origin
        return (
            ox - half,
            ox + (self.width - 0.5) * self.cell_size,
            oy - half,
            oy + (self.height - 0.5) * self.cell_size,
        )

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + i * self.cell_size, self.origin[1] + j * self.cell_size)

    def contains(self, p: Sequence[float]) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        return xmin <= p[0] < xmax and ymin <= p[1] < ymax

    @cached_property
    def obstacle_centers(self) -> np.ndarray:
        """World coordinates of every obstacle cell plus the ring just outside the map."""
        js, is_ = np.nonzero(self.cells == OBSTACLE)
        ring_i = np.concatenate(
            [
                np.arange(-1, self.width + 1),
                np.arange(-1, self.width + 1),
                np.full(self.height, -1),
                np.full(self.height, self.width),
            ]
        )
        ring_j = np.concatenate(
            [
                np.full(self.width + 2, -1),
                np.full(self.width + 2, self.height),
                np.arange(self.height),
                np.arange(self.height),
            ]
        )
        i_all = np.concatenate([is_, ring_i]).astype(float)
        j_all = np.concatenate([js, ring_j]).astype(float)
        return np.column_stack(
            [self.origin[0] + i_all * self.cell_size, self.origin[1] + j_all * self.cell_size]
        )

    @cached_property
    def _obstacle_tree(self) -> cKDTree:
        return cKDTree(self.obstacle_centers)


@dataclass(frozen=True)
class Footprint:
    """Ship rectangle; the safety margin is added on every side."""

    length: float = 15.0
    width: float = 4.0
    safety_margin: float = 2.0

    def __post_init__(self) -> None:
        if min(self.length, self.width, self.safety_margin) <= 0:
            raise ValueError("footprint dimensions and margin must be strictly positive")

    @property
    def half_length(self) -> float:
        return 0.5 * self.length + self.safety_margin

    @property
    def half_width(self) -> float:
        return 0.5 * self.width + self.safety_margin


# --------------------------------------------------------------------------
# Portable graymap I/O

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError("malformed graymap header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"unsupported graymap magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError("malformed graymap header") from exc
    if w <= 0 or h <= 0:
        raise ValueError("graymap has zero dimensions")
    if not 0 < maxval < 65536:
        raise ValueError(f"invalid graymap maxval {maxval}")
    return magic, w, h, maxval, pos


def read_pgm(data: bytes) -> np.ndarray:
    """Decode P2/P5 content to a ``(rows, cols)`` array scaled to 0..255."""
    magic, w, h, maxval, pos = _pgm_header(data)
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        raw = data[pos + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = w * h * dtype.itemsize
        if len(raw) < need:
            raise ValueError("graymap raster is truncated")
        pixels = np.frombuffer(raw[:need], dtype=dtype).astype(float)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) < w * h:
            raise ValueError("graymap raster is truncated")
        pixels = np.array([int(t) for t in body[: w * h]], dtype=float)
    return (pixels.reshape(h, w) * (255.0 / maxval)).round()


def write_pgm(grid: OccupancyGrid) -> bytes:
    """Encode a grid as binary P5, free cells white, top row = largest y."""
    image = np.where(np.flipud(grid.cells) == FREE, 255, 0).astype(np.uint8)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode()
    return header + image.tobytes()


def load_grid(
    image_bytes: bytes, cell_size: float, origin: Sequence[float] = (0.0, 0.0)
) -> OccupancyGrid:
    """Build a grid from graymap content.

    Pixels darker than 128 become obstacles; everything else is water. Image
    row 0 is the top of the map, i.e. the row with the largest world y.
    """
    pixels = read_pgm(image_bytes)
    cells = np.where(pixels < 128, OBSTACLE, FREE).astype(np.uint8)
    return OccupancyGrid(np.flipud(cells), cell_size, (origin[0], origin[1]))


# --------------------------------------------------------------------------
# Queries


def world_to_cell(grid: OccupancyGrid, p: Sequence[float]) -> tuple[int, int] | None:
    """Return the ``(i, j)`` cell containing ``p`` or ``None`` outside the map."""
    i = math.floor((p[0] - grid.origin[0]) / grid.cell_size + 0.5)
    j = math.floor((p[1] - grid.origin[1]) / grid.cell_size + 0.5)
    if 0 <= i < grid.width and 0 <= j < grid.height:
        return i, j
    return None


def sweep_rectangle(
    start: Sequence[float], heading: float, end: Sequence[float], fp: Footprint
) -> tuple[float, float, float, float, float, float]:
    """Oriented rectangle covering the footprint translated from start to end.

    Returns ``(cx, cy, ux, uy, half_len, half_wid)`` with ``(ux, uy)`` the
    unit direction of travel.
    """
    dx = end[0] - start[0]
    dy = end[1] - start[1]
    seg = math.hypot(dx, dy)
    theta = math.atan2(dy, dx) if seg > 0.0 else heading
    return (
        start[0] + 0.5 * dx,
        start[1] + 0.5 * dy,
        math.cos(theta),
        math.sin(theta),
        fp.half_length + 0.5 * seg,
        fp.half_width,
    )


def rectangle_overlap_depth(
    grid: OccupancyGrid, rect: tuple[float, float, float, float, float, float]
) -> float:
    """Largest separating-axis penetration of ``rect`` into an obstacle or the map edge.

    Positive values mean overlap; the magnitude is the smallest push along
    any of the four candidate axes that would separate the shapes.
    """
    cx, cy, ux, uy, hl, hw = rect
    half_cell = 0.5 * grid.cell_size
    hx = hl * abs(ux) + hw * abs(uy)
    hy = hl * abs(uy) + hw * abs(ux)
    xmin, xmax, ymin, ymax = grid.extent
    outside = max(xmin - (cx - hx), (cx + hx) - xmax, ymin - (cy - hy), (cy + hy) - ymax)

    cs = grid.cell_size
    ox, oy = grid.origin
    i0 = max(math.floor((cx - hx - ox) / cs + 0.5) - 1, 0)
    i1 = min(math.floor((cx + hx - ox) / cs + 0.5) + 1, grid.width - 1)
    j0 = max(math.floor((cy - hy - oy) / cs + 0.5) - 1, 0)
    j1 = min(math.floor((cy + hy - oy) / cs + 0.5) + 1, grid.height - 1)
    if i0 > i1 or j0 > j1:
        return outside
    window = grid.cells[j0 : j1 + 1, i0 : i1 + 1]
    jj, ii = np.nonzero(window == OBSTACLE)
    if jj.size == 0:
        return outside
    px = ox + (ii + i0) * cs - cx
    py = oy + (jj + j0) * cs - cy
    proj = half_cell * (abs(ux) + abs(uy))
    depth = np.minimum.reduce(
        [
            hx + half_cell - np.abs(px),
            hy + half_cell - np.abs(py),
            hl + proj - np.abs(px * ux + py * uy),
            hw + proj - np.abs(-px * uy + py * ux),
        ]
    )
    return max(outside, float(depth.max()))


def swept_collision(
    grid: OccupancyGrid,
    start_pose: Sequence[float],
    end_point: Sequence[float],
    fp: Footprint,
) -> bool:
    """True if the footprint moving straight from ``start_pose`` to ``end_point`` hits anything.

    ``start_pose`` is ``(x, y, heading)``. The sweep is aligned with the
    segment bearing, falling back to the start heading for a zero-length move.
    Any positive-area overlap with an obstacle cell, or any part of the swept
    rectangle beyond the map, counts as a collision.
    """
    rect = sweep_rectangle(start_pose[:2], start_pose[2], end_point, fp)
    return rectangle_overlap_depth(grid, rect) > 0.0


def nearest_obstacle_distance(grid: OccupancyGrid, p: Sequence[float]) -> float:
    """Euclidean distance from ``p`` to the closest obstacle cell centre.

    The ring of cells just outside the map counts as obstacle.
    """
    if not grid.contains(p):
        raise ValueError(f"point {tuple(p)} lies outside the grid extent")
    dist, _ = grid._obstacle_tree.query((float(p[0]), float(p[1])))
    return float(dist)


def nearest_obstacle_distances(grid: OccupancyGrid, points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`nearest_obstacle_distance` for an ``(N, 2)`` array."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    for p in points:
        if not grid.contains(p):
            raise ValueError(f"point {tuple(p)} lies outside the grid extent")
    dist, _ = grid._obstacle_tree.query(points)
    return np.asarray(dist, dtype=float)


@dataclass(frozen=True)
class EmpiricalCdf:
    """Step-function CDF over the distinct sample values."""

    values: tuple[float, ...]
    probabilities: tuple[float, ...]
    _n: int = field(default=0, repr=False)

    def __call__(self, x: float) -> float:
        k = bisect_right(self.values, x)
        return 0.0 if k == 0 else self.probabilities[k - 1]

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.values, self.probabilities))


def distance_cdf(samples: Sequence[float]) -> EmpiricalCdf:
    """Empirical CDF of non-negative distance samples.

    >>> distance_cdf([1, 2, 3, 4])(2)
    0.5
    """
    arr = np.asarray(samples, dtype=float)
    if arr.size == 0:
        raise ValueError("distance_cdf needs at least one sample")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("distance samples must be finite and non-negative")
    values, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts)
    probs = [float(c) / arr.size for c in cum]
    probs[-1] = 1.0
    return EmpiricalCdf(tuple(float(v) for v in values), tuple(probs), int(arr.size))
