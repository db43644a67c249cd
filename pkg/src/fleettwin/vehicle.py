"""Kinematic bicycle model, pure-pursuit tracking and localization noise."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import InvalidParameterError
from .planner import Trajectory
from .roadgraph import wrap_angle


class VehicleParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    wheelbase: float = 0.6
    length: float = 0.9
    width: float = 0.5
    steer_max: float = 0.6
    lookahead: float = 1.0
    k_v: float = 1.5
    a_min: float = -4.0
    a_max: float = 2.0

    @model_validator(mode="after")
    def _check(self):
        for name in ("wheelbase", "length", "width", "steer_max", "lookahead", "k_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")
        return self


@dataclass(frozen=True, slots=True)
class VehicleState:
    car_id: int
    x: float
    y: float
    heading: float
    v: float = 0.0
    steering: float = 0.0
    wheelbase: float = 0.6
    length: float = 0.9
    width: float = 0.5

    def __post_init__(self):
        if self.v < 0 or self.wheelbase <= 0:
            raise InvalidParameterError("need v >= 0 and wheelbase > 0")
        if not all(map(math.isfinite, (self.x, self.y, self.heading, self.v, self.steering))):
            raise InvalidParameterError("vehicle state must be finite")

    @property
    def pose(self) -> tuple[float, float, float]:
        return self.x, self.y, self.heading


@dataclass(frozen=True, slots=True)
class Control:
    accel: float = 0.0
    steering: float = 0.0

    def clamped(self, p: VehicleParams) -> "Control":
        return Control(min(max(self.accel, p.a_min), p.a_max),
                       min(max(self.steering, -p.steer_max), p.steer_max))


@dataclass(frozen=True)
class NoiseModel:
    pos_sigma: float = 0.02
    heading_sigma: float = 0.01
    enabled: bool = True

    def __post_init__(self):
        if self.pos_sigma < 0 or self.heading_sigma < 0:
            raise InvalidParameterError("noise sigmas must be >= 0")


def step(state: VehicleState, u: Control, dt: float, steer_max: float = math.inf) -> VehicleState:
    """Advance the kinematic bicycle by ``dt``.

    Position and heading are integrated exactly for the speed and steering
    held over the step (an arc, or a line when the yaw rate is zero); the
    speed then changes by ``accel * dt``.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be > 0")
    delta = min(max(u.steering, -steer_max), steer_max)
    v = state.v
    h = state.heading
    w = v / state.wheelbase * math.tan(delta)
    h1 = h + w * dt
    if abs(w * dt) > 1e-9:
        x = state.x + v / w * (math.sin(h1) - math.sin(h))
        y = state.y + v / w * (math.cos(h) - math.cos(h1))
    else:
        x = state.x + v * math.cos(h) * dt
        y = state.y + v * math.sin(h) * dt
    return VehicleState(
        state.car_id,
        x,
        y,
        wrap_angle(h1),
        max(0.0, v + u.accel * dt),
        delta,
        state.wheelbase,
        state.length,
        state.width,
    )


def _polyline(traj: Trajectory):
    """Frame coordinates and cumulative arclength as plain lists (cached)."""
    cache = getattr(traj, "_pp", None)
    if cache is None:
        cache = (traj.x.tolist(), traj.y.tolist(), traj.arclength.tolist())
        traj._pp = cache
    return cache


def _nearest(xs, ys, arc, x, y, lo, hi):
    """Closest point to (x, y) on segments lo..hi-1: (arclength, segment, dist2)."""
    best = (math.inf, 0, 0.0)
    for i in range(lo, hi):
        x0, y0 = xs[i], ys[i]
        sx, sy = xs[i + 1] - x0, ys[i + 1] - y0
        L2 = sx * sx + sy * sy
        u = 0.0
        if L2 > 1e-18:
            u = ((x - x0) * sx + (y - y0) * sy) / L2
            u = 0.0 if u < 0.0 else (1.0 if u > 1.0 else u)
        dx, dy = x0 + u * sx - x, y0 + u * sy - y
        d2 = dx * dx + dy * dy
        if d2 < best[0]:
            best = (d2, i, arc[i] + u * (arc[i + 1] - arc[i]))
    return best[2], best[1], best[0]


def nearest_on_trajectory(traj: Trajectory, x: float, y: float, time: float | None = None):
    """Arclength along the frame polyline of the point closest to (x, y), and its segment.

    With ``time`` the search starts in a window around the frame due at that
    time and widens to the whole polyline if the best foot sits on the window
    edge.
    """
    xs, ys, arc = _polyline(traj)
    n = len(xs)
    if n == 1:
        return 0.0, 0
    if time is not None:
        k = int((time - traj.start_time) / traj.dt)
        lo = min(max(k - 3, 0), n - 2)
        hi = min(max(k + 8, lo + 1), n - 1)
        s, i, _ = _nearest(xs, ys, arc, x, y, lo, hi)
        if (i > lo or lo == 0) and (i < hi - 1 or hi == n - 1):
            return s, i
    s, i, _ = _nearest(xs, ys, arc, x, y, 0, n - 1)
    return s, i


def lookahead_point(traj: Trajectory, x: float, y: float, lookahead: float,
                    time: float | None = None):
    """Point ``lookahead`` meters of arc ahead of the projection of (x, y).

    Interpolates between frames; past the last frame the polyline is
    extended along the final heading. Also returns the frame index reached.
    """
    xs, ys, arc = _polyline(traj)
    s_here, i = nearest_on_trajectory(traj, x, y, time)
    s_t = s_here + lookahead
    end = arc[-1]
    if s_t <= end and end > 0:
        j = max(bisect.bisect_left(arc, s_t), 1)
        seg = arc[j] - arc[j - 1]
        f = 0.0 if seg <= 0 else (s_t - arc[j - 1]) / seg
        return xs[j - 1] + f * (xs[j] - xs[j - 1]), ys[j - 1] + f * (ys[j] - ys[j - 1]), j
    extra = s_t - end
    h = float(traj.heading[-1])
    return xs[-1] + extra * math.cos(h), ys[-1] + extra * math.sin(h), len(xs) - 1


def pure_pursuit(state: VehicleState, traj: Trajectory, lookahead: float = 1.0,
                 params: VehicleParams = VehicleParams(), time: float | None = None) -> Control:
    """Steering toward the lookahead point plus proportional speed tracking.

    With ``time`` given the speed target is the trajectory speed at that
    absolute time and the planned acceleration is fed forward; otherwise the
    target is the speed of the frame nearest the car.
    """
    if traj is None or len(traj) == 0:
        raise InvalidParameterError("cannot track an empty trajectory")
    if not lookahead > 0:
        raise InvalidParameterError("lookahead must be > 0")
    px, py, _ = lookahead_point(traj, state.x, state.y, lookahead, time)
    alpha = math.atan2(py - state.y, px - state.x) - state.heading
    delta = math.atan(2.0 * state.wheelbase * math.sin(alpha) / lookahead)
    if time is not None:
        v_ref = traj.sample(time)[3]
        # feed the planned acceleration forward so braking is not delayed
        k = int(round((time - traj.start_time) / traj.dt, 9))
        a_ref = float(traj.a[k]) if 0 <= k < len(traj) - 1 else 0.0
    else:
        _, i = nearest_on_trajectory(traj, state.x, state.y)
        v_ref = float(traj.v[i])
        a_ref = 0.0
    accel = a_ref + params.k_v * (v_ref - state.v)
    return Control(accel, delta).clamped(params)


def perturb(state: VehicleState, nm: NoiseModel, rng: np.random.Generator) -> VehicleState:
    """Noisy copy of the pose, as a localization estimate would report it."""
    if not nm.enabled or (nm.pos_sigma == 0 and nm.heading_sigma == 0):
        return state
    ex, ey, eh = rng.normal(0.0, 1.0, 3)
    return replace(state, x=state.x + nm.pos_sigma * ex, y=state.y + nm.pos_sigma * ey,
                   heading=wrap_angle(state.heading + nm.heading_sigma * eh))
