"""Quintic-polynomial trajectory planning in Frenet coordinates.

The longitudinal motion follows a quintic toward an ACC-style target. The
sampled speed profile is then constrained frame by frame: acceleration
bounds, the speed limit of the road ahead, and an upper bound on s (leader
position, stop lines, obstacles). The s bound is enforced with a braking
envelope, so a trajectory that starts feasible can always stop in time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import InvalidParameterError, OffPathError
from .frenet import FrenetState, project, to_euclidean_many
from .roadgraph import NodeKind, Path, RoadGraph


class PlannerParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon: float = 4.0
    dt: float = 0.1
    a_max: float = 2.0
    a_min: float = -4.0
    standstill_gap: float = 1.0
    time_headway: float = 1.0
    cruise_speed_cap: float = 3.0
    # lateral convergence time to the centerline
    lateral_time: float = 2.0
    # deceleration used to slow down ahead of lower speed limits
    curve_decel: float = 1.5
    # obstacles closer than this to the centerline block the lane
    lane_half_width: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if self.horizon < 1.0:
            raise ValueError("horizon must be >= 1 s")
        if not 0 < self.dt <= 0.1:
            raise ValueError("dt must be in (0, 0.1] s")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")
        if self.standstill_gap < 0 or self.time_headway < 0:
            raise ValueError("gap policy values must be >= 0")
        if self.cruise_speed_cap <= 0 or self.curve_decel <= 0:
            raise ValueError("cruise_speed_cap and curve_decel must be > 0")
        if abs(self.horizon / self.dt - round(self.horizon / self.dt)) > 1e-9:
            raise ValueError("horizon must be an integer multiple of dt")
        return self

    @property
    def n_frames(self) -> int:
        return int(round(self.horizon / self.dt)) + 1


class ObstacleKind(str, enum.Enum):
    STATIC = "static"
    CONSTRUCTION_ZONE = "construction_zone"


@dataclass(frozen=True)
class Obstacle:
    position: tuple[float, float]
    radius: float
    kind: ObstacleKind = ObstacleKind.STATIC

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameterError("obstacle radius must be > 0")


@dataclass(frozen=True)
class TrajectoryFrame:
    t: float
    s: float
    d: float
    x: float
    y: float
    heading: float
    v: float
    a: float


@dataclass(eq=False)
class Trajectory:
    """Planned frames for one car, stored column-wise.

    ``start_time`` is on the simulation clock; frame k is at
    ``start_time + k * dt``.
    """

    car_id: int
    start_time: float
    dt: float
    t: np.ndarray
    s: np.ndarray
    d: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    v: np.ndarray
    a: np.ndarray
    path: Optional[Path] = None
    s_coeffs: Optional[np.ndarray] = None
    s_duration: float = 0.0
    d_coeffs: Optional[np.ndarray] = None
    d_duration: float = 0.0
    # terminal-speed scale chosen by conflict resolution (1.0 = as planned)
    scale: float = 1.0
    note: str = ""
    _arc: Optional[np.ndarray] = field(default=None, repr=False)
    _pp: Optional[tuple] = field(default=None, repr=False)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def frames(self) -> list[TrajectoryFrame]:
        return [
            TrajectoryFrame(*(float(c[k]) for c in (
                self.t, self.s, self.d, self.x, self.y, self.heading, self.v, self.a)))
            for k in range(len(self.t))
        ]

    def __len__(self):
        return len(self.t)

    @property
    def xy(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    @property
    def arclength(self) -> np.ndarray:
        """Cumulative Euclidean distance along the frame polyline."""
        if self._arc is None:
            seg = np.hypot(np.diff(self.x), np.diff(self.y))
            self._arc = np.concatenate([[0.0], np.cumsum(seg)])
        return self._arc

    def sample(self, time: float) -> tuple[float, float, float, float, float]:
        """Interpolated ``(x, y, heading, v, s)`` at an absolute time.

        Times outside the horizon clamp to the first/last frame.
        """
        u = (time - self.start_time) / self.dt
        n = len(self.t)
        if u <= 0:
            k, f = 0, 0.0
        elif u >= n - 1:
            k, f = n - 2, 1.0
        else:
            k = int(u)
            f = u - k
        if n == 1:
            return float(self.x[0]), float(self.y[0]), float(self.heading[0]), float(self.v[0]), float(self.s[0])
        x = self.x[k] + f * (self.x[k + 1] - self.x[k])
        y = self.y[k] + f * (self.y[k + 1] - self.y[k])
        dh = math.remainder(self.heading[k + 1] - self.heading[k], 2 * math.pi)
        h = math.remainder(self.heading[k] + f * dh, 2 * math.pi)
        v = self.v[k] + f * (self.v[k + 1] - self.v[k])
        s = self.s[k] + f * (self.s[k + 1] - self.s[k])
        return float(x), float(y), float(h), float(v), float(s)


# ---------------------------------------------------------------------------
# polynomials


def quintic_solve(s0, v0, a0, s1, v1, a1, T) -> np.ndarray:
    """Coefficients c0..c5 of the quintic matching position, velocity and
    acceleration at t=0 and t=T."""
    if not T > 0:
        raise InvalidParameterError(f"duration must be > 0, got {T}")
    T2 = T * T
    T3 = T2 * T
    h = s1 - s0
    c3 = (20.0 * h - (8.0 * v1 + 12.0 * v0) * T - (3.0 * a0 - a1) * T2) / (2.0 * T3)
    c4 = (-30.0 * h + (14.0 * v1 + 16.0 * v0) * T + (3.0 * a0 - 2.0 * a1) * T2) / (2.0 * T3 * T)
    c5 = (12.0 * h - 6.0 * (v1 + v0) * T - (a0 - a1) * T2) / (2.0 * T3 * T2)
    return np.array([s0, v0, a0 / 2.0, c3, c4, c5], dtype=float)


def quintic_eval(c, t, order: int = 0):
    """Value (order 0), first or second derivative of the polynomial."""
    t = np.asarray(t, dtype=float)
    if order == 0:
        return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    if order == 1:
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))
    if order == 2:
        return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))
    raise ValueError("order must be 0, 1 or 2")


def _velocity_beyond(c, T, t):
    """Quintic velocity on [0, T], held at its terminal value afterwards."""
    v_end = float(quintic_eval(c, T, 1))
    return np.where(t <= T, quintic_eval(c, np.minimum(t, T), 1), v_end)


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class Target:
    s1: float
    v1: float
    a1: float = 0.0
    full_stop: bool = False


def acc_target(ego: FrenetState, leader: Optional[FrenetState], params: PlannerParams,
               speed_limit: float) -> Target:
    """Terminal state at the end of the horizon under a constant-time-gap policy.

    The leader is predicted at constant velocity. When no leader is given, or
    the free-road target is closer than the leader-based one, the free-road
    target is used.
    """
    T = params.horizon
    v_free = min(speed_limit, params.cruise_speed_cap)
    free = Target(ego.s + 0.5 * (max(ego.s_dot, 0.0) + v_free) * T, v_free)
    if leader is None:
        return free
    v1 = min(leader.s_dot, speed_limit)
    s1 = leader.s + max(leader.s_dot, 0.0) * T - (params.standstill_gap + params.time_headway * max(v1, 0.0))
    if v1 < 0 or s1 <= ego.s:
        return Target(ego.s, 0.0, 0.0, full_stop=True)
    if s1 >= free.s1:
        return free
    return Target(s1, v1)


# ---------------------------------------------------------------------------
# speed-limit envelope


def speed_cap(path: Path, s: float, decel: float) -> float:
    """Speed allowed at ``s``: the current edge limit, lowered ahead of slower
    edges so they can be reached at ``decel``."""
    a = path.arrays
    s0, vmax = a["s0"], a["vmax"]
    i = path.segment_index(s)
    cap = float(vmax[i])
    n = len(s0)
    j = i + 1
    while j < n:
        gap = s0[j] - s
        if gap * 2 * decel > 16.0:  # beyond any reachable difference at scale speeds
            break
        cap = min(cap, math.sqrt(vmax[j] ** 2 + 2.0 * decel * gap))
        j += 1
    return cap


CAP_STEP = 0.05


def speed_cap_table(path: Path, decel: float) -> list:
    """:func:`speed_cap` tabulated every ``CAP_STEP`` m; each cell keeps the
    lower of its two end values. Cached on the path."""
    cache = path.__dict__.setdefault("_cap_tables", {})
    table = cache.get(decel)
    if table is None:
        n = int(path.total_length / CAP_STEP) + 2
        ends = [speed_cap(path, min(i * CAP_STEP, path.total_length), decel) for i in range(n + 1)]
        table = [min(ends[i], ends[i + 1]) for i in range(n)]
        cache[decel] = table
    return table


def longitudinal_profile(s0, v0, v_des, caps, dt, a_min, a_max, vcap_fn):
    """Rate-limited speed profile tracking ``v_des`` under an s upper bound.

    ``v_des[k]`` and ``caps[k]`` refer to frame k (``v_des[0]`` unused).
    Returns arrays (s, v).
    """
    n = len(v_des)
    b = -a_min
    s = np.empty(n)
    v = np.empty(n)
    s[0] = s0
    v[0] = vk = min(max(v0, 0.0), vcap_fn(s0))
    sk = s0
    for k in range(1, n):
        lo = max(vk + a_min * dt, 0.0)
        hi = vk + a_max * dt
        vt = min(max(v_des[k], lo), hi)
        vt = min(vt, vcap_fn(sk + vk * dt))
        room = caps[k] - sk - 0.5 * vk * dt
        if room <= 0:
            vt = 0.0
        else:
            vt = min(vt, b * (-dt + math.sqrt(dt * dt + 2.0 * room / b)))
        vt = max(vt, lo)
        sk = sk + 0.5 * (vk + vt) * dt
        vk = vt
        s[k] = sk
        v[k] = vk
    return s, v


# ---------------------------------------------------------------------------
# planning


def obstacle_stops(path: Path, fs: FrenetState, obstacles: Sequence[Obstacle],
                   params: PlannerParams) -> list[float]:
    """Stop positions (s) in front of obstacles blocking the lane ahead."""
    stops = []
    for ob in obstacles:
        p = project(path, ob.position[0], ob.position[1])
        if p.clamped or abs(p.d) > ob.radius + params.lane_half_width:
            continue
        if p.s + ob.radius <= fs.s:
            continue
        stops.append(p.s - ob.radius - params.standstill_gap)
    return stops


def plan(
    path: Path,
    fs: FrenetState,
    params: PlannerParams,
    leader: Optional[FrenetState] = None,
    obstacles: Sequence[Obstacle] = (),
    speed_limit: Optional[float] = None,
    *,
    stops: Sequence[float] = (),
    car_id: int = 0,
    start_time: float = 0.0,
    target_scale: float = 1.0,
    ceiling: Optional[np.ndarray] = None,
) -> Trajectory:
    """Plan one trajectory from Frenet state ``fs`` along ``path``.

    ``speed_limit`` overrides the per-edge limits when given. ``stops`` are
    extra s positions the car must not pass (stop lines, holds).
    ``target_scale`` scales the terminal speed and travel of the target
    (used by conflict resolution); ``ceiling`` is an optional per-frame
    velocity ceiling.
    """
    if not path.segments:
        raise OffPathError("empty path")
    if not (-1e-9 <= fs.s <= path.total_length + 1e-9):
        raise OffPathError(f"s={fs.s} is outside the path")
    n = params.n_frames
    dt = params.dt
    T = params.horizon
    t = np.arange(n) * dt

    if speed_limit is None:
        table = speed_cap_table(path, params.curve_decel)
        last = len(table) - 1

        def vcap(s):
            i = int(s / CAP_STEP)
            return table[i if i < last else last] if i >= 0 else table[0]
        limit_here = speed_cap(path, fs.s, params.curve_decel)
    else:
        def vcap(s):
            return speed_limit
        limit_here = speed_limit

    stop_list = list(stops) + obstacle_stops(path, fs, obstacles, params)
    stop_list.append(path.total_length)
    stop_s = min(stop_list)

    target = acc_target(fs, leader, params, limit_here)
    s1, v1, full_stop = target.s1, target.v1, target.full_stop
    if target_scale < 1.0:
        s1 = fs.s + target_scale * (s1 - fs.s)
        v1 = target_scale * v1
        full_stop = full_stop or target_scale <= 0.0
    if stop_s < s1:
        s1, v1 = max(stop_s, fs.s), 0.0

    v0 = max(fs.s_dot, 0.0)
    a0 = fs.s_ddot
    dist = s1 - fs.s
    if full_stop or dist <= 1e-9:
        # brake to a standstill as hard as allowed
        duration = max(v0 / -params.a_min, dt)
        coeffs = quintic_solve(fs.s, v0, a0, fs.s + 0.5 * v0 * duration, 0.0, 0.0, duration)
        v_des = np.zeros(n)
    elif v1 == 0.0 and v0 > 0 and 2.0 * dist / v0 < T:
        # stop ahead within the horizon: smoothstep-shaped deceleration
        duration = 2.0 * dist / v0
        coeffs = quintic_solve(fs.s, v0, a0, s1, 0.0, 0.0, duration)
        v_des = _velocity_beyond(coeffs, duration, t)
    else:
        duration = T
        coeffs = quintic_solve(fs.s, v0, a0, s1, v1, 0.0, T)
        v_des = _velocity_beyond(coeffs, duration, t)
    if ceiling is not None:
        v_des = np.minimum(v_des, ceiling)

    caps = np.full(n, stop_s)
    if leader is not None:
        lead_caps = leader.s + max(leader.s_dot, 0.0) * t - params.standstill_gap
        caps = np.minimum(caps, lead_caps)
    s, v = longitudinal_profile(fs.s, v0, v_des, caps, dt, params.a_min, params.a_max, vcap)
    s = np.minimum(s, path.total_length)

    t_lat = min(T, params.lateral_time)
    d_coeffs = quintic_solve(fs.d, fs.d_dot, 0.0, 0.0, 0.0, 0.0, t_lat)
    d = np.where(t <= t_lat, quintic_eval(d_coeffs, np.minimum(t, t_lat)), 0.0)

    x, y, heading = to_euclidean_many(path, s, d)
    a = np.empty(n)
    a[:-1] = np.diff(v) / dt
    a[-1] = 0.0
    return Trajectory(car_id, start_time, dt, t, s, d, x, y, heading, v, a, path,
                      coeffs, duration, d_coeffs, t_lat, scale=target_scale)


def stopped_trajectory(traj: Trajectory, params: PlannerParams) -> Trajectory:
    """Hardest-braking version of ``traj`` along the same frames' path."""
    return plan(traj.path, FrenetState(float(traj.s[0]), float(traj.d[0]), float(traj.v[0]), 0.0),
                params, car_id=traj.car_id, start_time=traj.start_time, target_scale=0.0)


# ---------------------------------------------------------------------------
# junction awareness


class SegmentClass(str, enum.Enum):
    NORMAL = "normal"
    APPROACHING_MERGE = "approaching_merge"
    APPROACHING_DIVERGE = "approaching_diverge"
    IN_INTERSECTION = "in_intersection"


def classify_segment(path: Path, s: float, graph: RoadGraph, lookahead: float = 8.0) -> SegmentClass:
    """Junction context of position ``s``.

    Intersections take precedence over merges, merges over diverges. A car
    on an internal turn edge is in the intersection.
    """
    if not path.segments:
        return SegmentClass.NORMAL
    seg = path.segments[path.segment_index(s)]
    kinds = graph.nodes
    if (kinds[seg.from_node].kind is NodeKind.INTERSECTION_ENTRY
            and kinds[seg.to_node].kind is NodeKind.INTERSECTION_EXIT):
        return SegmentClass.IN_INTERSECTION
    ahead = {kinds[nid].kind for nid, ns in path.node_sequence if s < ns <= s + lookahead}
    if NodeKind.INTERSECTION_ENTRY in ahead:
        return SegmentClass.IN_INTERSECTION
    if NodeKind.MERGE in ahead:
        return SegmentClass.APPROACHING_MERGE
    if NodeKind.DIVERGE in ahead:
        return SegmentClass.APPROACHING_DIVERGE
    return SegmentClass.NORMAL
