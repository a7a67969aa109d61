"""Surge/yaw vessel model with quadratic drag and two PID loops.

Thrust drives speed against drag, the rudder sets a turn rate proportional
to speed, and the state is advanced with explicit Euler steps of ``dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    i_limit: float = math.inf


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


@dataclass(frozen=True)
class ShipParams:
    length: float = 15.0
    width: float = 4.0
    rho: float = 1000.0
    c_d: float = 1.0
    area: float = 8.0
    thrust_force_max: float = 2.0e4
    mass: float = 20000.0
    rudder_max: float = 0.6
    turn_rate_gain: float = 0.05
    v_max: float = 5.0
    dt: float = 0.5
    pid_speed: PidGains = PidGains(kp=1.0, ki=0.1, kd=0.0, i_limit=10.0)
    pid_heading: PidGains = PidGains(kp=4.0, ki=0.0, kd=0.0, i_limit=1.0)

    def __post_init__(self) -> None:
        for name in ("length", "width", "rho", "c_d", "area", "thrust_force_max",
                     "mass", "rudder_max", "turn_rate_gain", "v_max", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ship parameter {name} must be strictly positive")


@dataclass(frozen=True)
class ShipState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    rudder_angle: float = 0.0
    thrust: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControllerState:
    speed: PidState = PidState()
    heading: PidState = PidState()


@dataclass(frozen=True)
class Setpoint:
    desired_speed: float
    desired_heading: float


def drag_force(params: ShipParams, u: float) -> float:
    """Drag on the hull at flow speed ``u``: 0.5 * rho * u^2 * c_d * A."""
    return 0.5 * params.rho * u * u * params.c_d * params.area


def acceleration(params: ShipParams, thrust: float, speed: float) -> float:
    return (thrust * params.thrust_force_max - drag_force(params, speed)) / params.mass


def pid_step(state: PidState, gains: PidGains, error: float, dt: float) -> tuple[float, PidState]:
    """One controller update; the integrator is clamped to ``+-i_limit``."""
    integral = state.integral + error * dt
    integral = min(gains.i_limit, max(-gains.i_limit, integral))
    derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    out = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return out, PidState(integral=integral, prev_error=error)


def step_dynamics(
    state: ShipState, ctrl: ControllerState, sp: Setpoint, params: ShipParams
) -> tuple[ShipState, ControllerState]:
    dt = params.dt
    u_cmd, speed_pid = pid_step(ctrl.speed, params.pid_speed, sp.desired_speed - state.speed, dt)
    thrust = min(1.0, max(0.0, u_cmd))
    herr = wrap_angle(sp.desired_heading - state.heading)
    r_cmd, heading_pid = pid_step(ctrl.heading, params.pid_heading, herr, dt)
    rudder = min(params.rudder_max, max(-params.rudder_max, r_cmd))

    speed = max(0.0, state.speed + acceleration(params, thrust, state.speed) * dt)
    heading = wrap_angle(state.heading + params.turn_rate_gain * rudder * speed * dt)
    x = state.x + speed * math.cos(heading) * dt
    y = state.y + speed * math.sin(heading) * dt
    return (
        ShipState(x, y, heading, speed, rudder, thrust),
        ControllerState(speed=speed_pid, heading=heading_pid),
    )


# --------------------------------------------------------------------------
# Flat key = value parameter files

_GAIN_KEYS = {"kp", "ki", "kd", "i_limit"}


def parse_ship_params(text: str) -> ShipParams:
    """Parse ``key = value`` lines; ``pid_speed_kp`` style keys set gains."""
    scalars: dict[str, float] = {}
    gains: dict[str, dict[str, float]] = {"pid_speed": {}, "pid_heading": {}}
    valid = {f.name for f in fields(ShipParams)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        number = float(value)
        for prefix in gains:
            if key.startswith(prefix + "_") and key[len(prefix) + 1 :] in _GAIN_KEYS:
                gains[prefix][key[len(prefix) + 1 :]] = number
                break
        else:
            if key not in valid or key in gains:
                raise ValueError(f"line {lineno}: unknown ship parameter {key!r}")
            scalars[key] = number
    base = ShipParams()
    kwargs: dict[str, object] = dict(scalars)
    for prefix, overrides in gains.items():
        if overrides:
            kwargs[prefix] = replace(getattr(base, prefix), **overrides)
    return replace(base, **kwargs)


def load_ship_params(path: str | Path) -> ShipParams:
    return parse_ship_params(Path(path).read_text())


def format_ship_params(params: ShipParams) -> str:
    lines = []
    for f in fields(params):
        value = getattr(params, f.name)
        if isinstance(value, PidGains):
            for g in fields(value):
                lines.append(f"{f.name}_{g.name} = {getattr(value, g.name)!r}")
        else:
            lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"
