"""Frenet-frame sampling planner along a spline reference path.

Candidates pair a quintic lateral offset ``delta(t)`` with a velocity-keeping
quartic arc length ``sigma(t)``. Each candidate is costed for jerk, duration,
terminal deviation, and proximity to candidates that collided.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .gridmap import Footprint, OccupancyGrid, rectangle_overlap_depth, sweep_rectangle

Point = tuple[float, float]


class ProjectionError(ValueError):
    pass


class ReferencePath:
    """Arc-length parameterised natural cubic spline through waypoints.

    Queries beyond ``[0, length]`` extrapolate along the end tangents.
    """

    def __init__(self, waypoints: Sequence[Sequence[float]], samples_per_segment: int = 400) -> None:
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("a reference path needs at least two waypoints")
        chords = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(chords <= 0):
            raise ValueError("duplicate consecutive waypoints")
        self.waypoints = pts
        u = np.concatenate([[0.0], np.cumsum(chords)])
        self._sx = CubicSpline(u, pts[:, 0], bc_type="natural")
        self._sy = CubicSpline(u, pts[:, 1], bc_type="natural")
        # dense table for the arc length <-> chord parameter map
        uu = np.unique(
            np.concatenate([np.linspace(a, b, samples_per_segment + 1) for a, b in zip(u, u[1:])])
        )
        speed = np.hypot(self._sx(uu, 1), self._sy(uu, 1))
        # trapezoid rule; the table is dense enough for sub-millimetre error
        ds = 0.5 * (speed[1:] + speed[:-1]) * np.diff(uu)
        self._u = uu
        self._s = np.concatenate([[0.0], np.cumsum(ds)])
        self.length = float(self._s[-1])

    def _param(self, s):
        return np.interp(s, self._s, self._u)

    def _derivs(self, s):
        u = self._param(np.clip(s, 0.0, self.length))
        return (
            self._sx(u), self._sy(u),
            self._sx(u, 1), self._sy(u, 1),
            self._sx(u, 2), self._sy(u, 2),
        )

    def position(self, s):
        s = np.asarray(s, dtype=float)
        x, y, dx, dy, _, _ = self._derivs(s)
        norm = np.hypot(dx, dy)
        over = np.where(s > self.length, s - self.length, np.where(s < 0, s, 0.0))
        return np.stack([x + over * dx / norm, y + over * dy / norm], axis=-1)

    def tangent(self, s):
        _, _, dx, dy, _, _ = self._derivs(np.asarray(s, dtype=float))
        norm = np.hypot(dx, dy)
        return np.stack([dx / norm, dy / norm], axis=-1)

    def normal(self, s):
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def heading(self, s):
        t = self.tangent(s)
        return np.arctan2(t[..., 1], t[..., 0])

    def curvature(self, s):
        s = np.asarray(s, dtype=float)
        _, _, dx, dy, ddx, ddy = self._derivs(s)
        k = (dx * ddy - dy * ddx) / np.hypot(dx, dy) ** 3
        return np.where((s < 0) | (s > self.length), 0.0, k)


def fit_reference(waypoints: Sequence[Sequence[float]]) -> ReferencePath:
    return ReferencePath(waypoints)


@dataclass(frozen=True)
class FrenetState:
    sigma: float
    sigma_d: float = 0.0
    sigma_dd: float = 0.0
    delta: float = 0.0
    delta_d: float = 0.0
    delta_dd: float = 0.0


def frenet_to_world(ref: ReferencePath, fs: FrenetState, check: bool = True) -> tuple[float, float, float]:
    """World ``(x, y, heading)`` of a Frenet state."""
    if check and not 0.0 <= fs.sigma <= ref.length:
        raise ValueError(f"sigma {fs.sigma} outside [0, {ref.length}]")
    kappa = float(ref.curvature(fs.sigma))
    if check and kappa != 0.0 and abs(fs.delta) >= 1.0 / abs(kappa):
        raise ValueError("lateral offset exceeds the local curvature radius")
    p = ref.position(fs.sigma)
    nrm = ref.normal(fs.sigma)
    along = (1.0 - kappa * fs.delta) * fs.sigma_d
    heading = float(ref.heading(fs.sigma)) + math.atan2(fs.delta_d, along) if (along or fs.delta_d) else float(ref.heading(fs.sigma))
    return float(p[0] + fs.delta * nrm[0]), float(p[1] + fs.delta * nrm[1]), heading


def world_to_frenet(
    ref: ReferencePath,
    x: float,
    y: float,
    heading: float = 0.0,
    speed: float = 0.0,
    tol: float = 1e-3,
) -> FrenetState:
    """Project a pose onto the reference by minimising distance over arc length."""
    grid = np.linspace(0.0, ref.length, max(int(ref.length / 2.0), 2) + 1)
    pts = ref.position(grid)
    d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
    # local minima of the coarse scan
    minima = [i for i in range(len(grid))
              if (i == 0 or d2[i] <= d2[i - 1]) and (i == len(grid) - 1 or d2[i] <= d2[i + 1])]
    step = grid[1] - grid[0]

    def dist2(s):
        p = ref.position(s)
        return float((p[0] - x) ** 2 + (p[1] - y) ** 2)

    refined = []
    for i in minima:
        lo, hi = max(grid[i] - step, 0.0), min(grid[i] + step, ref.length)
        res = minimize_scalar(dist2, bounds=(lo, hi), method="bounded", options={"xatol": tol * 0.1})
        refined.append((res.fun, float(res.x)))
    refined.sort()
    best_d2, sigma = refined[0]
    for other_d2, other_s in refined[1:]:
        if abs(other_s - sigma) > 4 * step and math.sqrt(other_d2) - math.sqrt(best_d2) < tol:
            raise ProjectionError(f"ambiguous projection of ({x}, {y}) at sigma {sigma} and {other_s}")
    p = ref.position(sigma)
    nrm = ref.normal(sigma)
    delta = float((x - p[0]) * nrm[0] + (y - p[1]) * nrm[1])
    rel = heading - float(ref.heading(sigma))
    kappa = float(ref.curvature(sigma))
    return FrenetState(
        sigma=sigma,
        sigma_d=speed * math.cos(rel) / max(1.0 - kappa * delta, 1e-6),
        delta=delta,
        delta_d=speed * math.sin(rel),
    )


# --------------------------------------------------------------------------
# Polynomials


def quintic(p0: float, v0: float, a0: float, p1: float, v1: float, a1: float, T: float) -> np.ndarray:
    """Coefficients (ascending) matching position, velocity and acceleration at 0 and T."""
    c0, c1, c2 = p0, v0, 0.5 * a0
    A = np.array([[T**3, T**4, T**5], [3 * T**2, 4 * T**3, 5 * T**4], [6 * T, 12 * T**2, 20 * T**3]])
    b = np.array([p1 - (c0 + c1 * T + c2 * T**2), v1 - (c1 + 2 * c2 * T), a1 - 2 * c2])
    c3, c4, c5 = np.linalg.solve(A, b)
    return np.array([c0, c1, c2, c3, c4, c5])


def quartic(p0: float, v0: float, a0: float, v1: float, a1: float, T: float) -> np.ndarray:
    """Velocity-keeping quartic: start state, end velocity and acceleration; end position free."""
    c0, c1, c2 = p0, v0, 0.5 * a0
    A = np.array([[3 * T**2, 4 * T**3], [6 * T, 12 * T**2]])
    b = np.array([v1 - (c1 + 2 * c2 * T), a1 - 2 * c2])
    c3, c4 = np.linalg.solve(A, b)
    return np.array([c0, c1, c2, c3, c4])


def jerk_cost(coeffs: Sequence[float], t_end: float) -> float:
    """Closed-form integral of the squared third derivative over ``[0, t_end]``."""
    c = np.zeros(6)
    c[: len(coeffs)] = coeffs
    if len(coeffs) > 6:
        raise ValueError("polynomial degree must be at most 5")
    a, b, q = 6.0 * c[3], 24.0 * c[4], 60.0 * c[5]
    T = t_end
    return float(
        a * a * T + a * b * T**2 + (b * b + 2 * a * q) * T**3 / 3.0 + b * q * T**4 / 2.0 + q * q * T**5 / 5.0
    )


# --------------------------------------------------------------------------
# Candidates


@dataclass(frozen=True)
class FrenetConfig:
    k_lat: float = 1.0
    k_lon: float = 1.0
    k_col: float = 1.0
    k_j: float = 0.1
    k_t: float = 0.1
    k_delta: float = 1.0
    k_sigma: float = 1.0
    k_d: float = 10.0
    target_speed: float = 2.0
    t_end_grid: tuple[float, ...] = (20.0, 25.0, 30.0)
    delta_end_grid: tuple[float, ...] = (-22.5, -15.0, -7.5, 0.0, 7.5, 15.0, 22.5)
    speed_factors: tuple[float, ...] = (0.5, 1.0)
    max_curvature: float = 0.05
    max_speed: float = 3.0
    corridor: float = 25.0
    sample_dt: float = 2.5
    waypoint_stride: int = 2

    def __post_init__(self) -> None:
        weights = (self.k_lat, self.k_lon, self.k_col, self.k_j, self.k_t, self.k_delta, self.k_sigma, self.k_d)
        if any(w < 0 for w in weights):
            raise ValueError("cost weights must be non-negative")
        if not (self.t_end_grid and self.delta_end_grid and self.speed_factors):
            raise ValueError("sampling grids must be non-empty")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")

    @property
    def speed_grid(self) -> tuple[float, ...]:
        return tuple(f * self.target_speed for f in self.speed_factors)


@dataclass(frozen=True)
class CostBreakdown:
    lateral: float
    longitudinal: float
    collision: float
    total: float


@dataclass(eq=False)
class FrenetCandidate:
    index: int
    t_end: float
    delta_end: float
    sigma_d_end: float
    delta_poly: np.ndarray
    sigma_poly: np.ndarray
    times: np.ndarray
    world_points: np.ndarray  # (N, 2)
    sigma: np.ndarray
    sigma_d: np.ndarray
    delta: np.ndarray
    delta_d: np.ndarray
    costs: CostBreakdown | None = None
    valid: bool = True
    reason: str = ""


def generate_candidates(fs: FrenetState, cfg: FrenetConfig, ref: ReferencePath | None = None) -> list[FrenetCandidate]:
    """One candidate per ``(t_end, delta_end, end speed)`` combination, sampled every ``sample_dt``."""
    out = []
    for idx, (T, d_end, v_end) in enumerate(itertools.product(cfg.t_end_grid, cfg.delta_end_grid, cfg.speed_grid)):
        dp = quintic(fs.delta, fs.delta_d, fs.delta_dd, d_end, 0.0, 0.0, T)
        sp = quartic(fs.sigma, fs.sigma_d, fs.sigma_dd, v_end, 0.0, T)
        n = int(math.floor(T / cfg.sample_dt + 1e-9))
        times = np.arange(n + 1) * cfg.sample_dt
        if times[-1] < T - 1e-9:
            times = np.append(times, T)
        delta = P.polyval(times, dp)
        sigma = P.polyval(times, sp)
        delta_d = P.polyval(times, P.polyder(dp))
        sigma_d = P.polyval(times, P.polyder(sp))
        if ref is not None:
            base = ref.position(sigma)
            nrm = ref.normal(sigma)
            pts = base + delta[:, None] * nrm
        else:
            pts = np.column_stack([sigma, delta])
        out.append(FrenetCandidate(idx, T, d_end, v_end, dp, sp, times, pts, sigma, sigma_d, delta, delta_d))
    return out


def collision_cost(cand: FrenetCandidate, colliding: Sequence[FrenetCandidate], k_d: float) -> float:
    """Sum of ``exp(k_d - |D_T|)`` over colliding candidates, ``D_T`` the end-offset gap."""
    return float(sum(math.exp(k_d - abs(cand.delta_end - t.delta_end)) for t in colliding))


def total_cost(cand: FrenetCandidate, colliding: Sequence[FrenetCandidate], cfg: FrenetConfig) -> CostBreakdown:
    c_lat = cfg.k_j * jerk_cost(cand.delta_poly, cand.t_end) + cfg.k_t * cand.t_end + cfg.k_delta * cand.delta_end**2
    c_lon = (
        cfg.k_j * jerk_cost(cand.sigma_poly, cand.t_end)
        + cfg.k_t * cand.t_end
        + cfg.k_sigma * (cand.sigma_d_end - cfg.target_speed) ** 2
    )
    c_col = collision_cost(cand, colliding, cfg.k_d)
    return CostBreakdown(c_lat, c_lon, c_col, cfg.k_lat * c_lat + cfg.k_lon * c_lon + cfg.k_col * c_col)


def _curvature_of(points: np.ndarray, dt: float) -> np.ndarray:
    if len(points) < 3:
        return np.zeros(len(points))
    vx, vy = np.gradient(points[:, 0], dt), np.gradient(points[:, 1], dt)
    ax, ay = np.gradient(vx, dt), np.gradient(vy, dt)
    speed = np.hypot(vx, vy)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.abs(vx * ay - vy * ax) / speed**3
    return np.where(speed > 1e-6, k, 0.0)


def check_validity(
    cand: FrenetCandidate, grid: OccupancyGrid, footprint: Footprint, cfg: FrenetConfig, ref: ReferencePath
) -> tuple[bool, str]:
    """Reject on speed, curvature, corridor or a swept collision between consecutive samples."""
    kappa_ref = ref.curvature(cand.sigma)
    speed = np.hypot((1.0 - kappa_ref * cand.delta) * cand.sigma_d, cand.delta_d)
    if np.any(speed > cfg.max_speed + 1e-9):
        return False, "speed"
    if np.any(np.abs(cand.delta) > cfg.corridor + 1e-9):
        return False, "corridor"
    if np.any(_curvature_of(cand.world_points, cfg.sample_dt) > cfg.max_curvature):
        return False, "curvature"
    pts = cand.world_points
    for a, b in zip(pts, pts[1:]):
        if np.allclose(a, b):
            continue
        rect = sweep_rectangle(a, 0.0, b, footprint)
        if rectangle_overlap_depth(grid, rect) > 0.0:
            return False, "collision"
    return True, ""


@dataclass(frozen=True)
class FrenetFailure:
    reason: str

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class FrenetPlan:
    points: tuple[Point, ...]
    chosen_index: int
    candidates: tuple[FrenetCandidate, ...] = field(repr=False)


def plan_frenet(
    pose: Sequence[float],
    speed: float,
    ref: ReferencePath,
    grid: OccupancyGrid,
    footprint: Footprint,
    cfg: FrenetConfig,
) -> FrenetPlan | FrenetFailure:
    """Cheapest valid candidate from the current ship pose, as waypoints."""
    try:
        fs = world_to_frenet(ref, pose[0], pose[1], pose[2], speed)
    except ProjectionError as exc:
        return FrenetFailure(f"projection failed: {exc}")
    cands = generate_candidates(fs, cfg, ref)
    colliding = []
    for c in cands:
        c.valid, c.reason = check_validity(c, grid, footprint, cfg, ref)
        if not c.valid and c.reason == "collision":
            colliding.append(c)
    best = None
    for c in cands:
        c.costs = total_cost(c, colliding, cfg)
        if c.valid and (best is None or c.costs.total < best.costs.total):
            best = c
    if best is None:
        reasons = sorted({c.reason for c in cands})
        return FrenetFailure("no valid candidate (" + ", ".join(reasons) + ")")
    pts = best.world_points
    stride = cfg.waypoint_stride
    idx = list(range(stride, len(pts), stride))
    if not idx or idx[-1] != len(pts) - 1:
        idx.append(len(pts) - 1)
    return FrenetPlan(tuple((float(pts[i][0]), float(pts[i][1])) for i in idx), best.index, tuple(cands))
