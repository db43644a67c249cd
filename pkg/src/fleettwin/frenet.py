"""Conversion between Euclidean poses and path-relative (s, d) coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, OffPathError
from .roadgraph import TWO_PI, Path, wrap_angle

DEFAULT_CORRIDOR = 2.0
# search window around the previous s, about five waypoints either side
WINDOW = 2.5


@dataclass(slots=True)
class FrenetState:
    s: float
    d: float
    s_dot: float = 0.0
    d_dot: float = 0.0
    s_ddot: float = 0.0


@dataclass(frozen=True, slots=True)
class Projection:
    s: float
    d: float
    segment: int
    distance: float
    clamped: bool


def _project_segment(path: Path, i: int, x: float, y: float):
    """Foot point of (x, y) on segment ``i``: (s_local, d, distance, clamped)."""
    e = path.segments[i]
    L = e.length
    if e.is_arc:
        g = e.geometry
        rx, ry = x - g.center[0], y - g.center[1]
        rho = math.hypot(rx, ry)
        sweep = L / g.radius
        delta = (e.turn * (math.atan2(ry, rx) - e.start_angle)) % TWO_PI
        d = e.turn * (g.radius - rho)
        if delta <= sweep:
            return g.radius * delta, d, abs(rho - g.radius), False
        # outside the sweep: snap to the nearer end
        sl = L if (delta - sweep) < (TWO_PI - delta) else 0.0
        px, py, _ = e.pose_at(sl)
        return sl, d, math.hypot(x - px, y - py), True
    c, sn = math.cos(e.start_heading), math.sin(e.start_heading)
    dx, dy = x - e.start[0], y - e.start[1]
    t = dx * c + dy * sn
    d = c * dy - sn * dx
    if t < 0.0:
        return 0.0, d, math.hypot(dx, dy), True
    if t > L:
        return L, d, math.hypot(dx - c * L, dy - sn * L), True
    return t, d, abs(d), False


def _best(path: Path, indices, x, y, hint):
    best = None
    for i in indices:
        sl, d, dist, clamped = _project_segment(path, i, x, y)
        s = path.edge_starts[i] + sl
        key = (round(dist, 9), abs(s - hint) if hint is not None else 0.0)
        if best is None or key < best[0]:
            best = (key, Projection(s, d, i, dist, clamped))
    return best[1]


def project(path: Path, x: float, y: float, hint: Optional[float] = None) -> Projection:
    """Nearest point of the path geometry to (x, y).

    With a ``hint`` (the previous s) only segments within a small window are
    searched first; a global scan is the fallback. The hint also breaks ties
    between equidistant segments on self-approaching routes.
    """
    n = len(path.segments)
    if n == 0:
        raise InvalidParameterError("cannot project onto an empty path")
    if hint is not None:
        lo = path.segment_index(hint - WINDOW)
        hi = path.segment_index(hint + WINDOW)
        p = _best(path, range(lo, hi + 1), x, y, hint)
        # a foot clamped to the outer end of the window may belong further on
        at_lo = lo > 0 and p.segment == lo and p.clamped and p.s <= path.edge_starts[lo] + 1e-12
        at_hi = (hi < n - 1 and p.segment == hi and p.clamped
                 and p.s >= path.edge_starts[hi] + path.segments[hi].length - 1e-12)
        if not (at_lo or at_hi) and p.distance <= DEFAULT_CORRIDOR:
            return p
    return _best(path, range(n), x, y, hint)


def tangent_heading(path: Path, s: float) -> float:
    i = path.segment_index(s)
    return path.segments[i].pose_at(s - path.edge_starts[i])[2]


def to_frenet(
    path: Path,
    pose: tuple[float, float, float],
    speed: float = 0.0,
    accel: float = 0.0,
    corridor: float = DEFAULT_CORRIDOR,
    hint: Optional[float] = None,
) -> FrenetState:
    """Localize a pose ``(x, y, heading)`` moving at ``speed`` onto ``path``.

    Raises OffPathError when the pose is farther than ``corridor`` from it.
    """
    if len(path.waypoints) < 2:
        raise InvalidParameterError("path needs at least two waypoints")
    x, y, heading = pose
    p = project(path, x, y, hint)
    if p.distance > corridor:
        raise OffPathError(
            f"pose ({x:.3f}, {y:.3f}) is {p.distance:.3f} m from the path "
            f"(corridor {corridor} m)", p.distance)
    dtheta = wrap_angle(heading - tangent_heading(path, p.s))
    return FrenetState(p.s, p.d, speed * math.cos(dtheta), speed * math.sin(dtheta), accel)


def to_euclidean(path: Path, s: float, d: float = 0.0) -> tuple[float, float, float]:
    """Point offset ``d`` (left positive) from the path at arclength ``s``."""
    if not (-1e-9 <= s <= path.total_length + 1e-9) or not path.segments:
        raise InvalidParameterError(f"s={s} outside [0, {path.total_length}]")
    s = min(max(s, 0.0), path.total_length)
    i = path.segment_index(s)
    e = path.segments[i]
    x, y, h = e.pose_at(s - path.edge_starts[i])
    return x - math.sin(h) * d, y + math.cos(h) * d, h


def to_euclidean_many(path: Path, s: np.ndarray, d: np.ndarray):
    """Vectorized :func:`to_euclidean`; ``s`` is clipped to the path."""
    a = path.arrays
    s = np.clip(np.asarray(s, dtype=float), 0.0, path.total_length)
    d = np.broadcast_to(np.asarray(d, dtype=float), s.shape)
    idx = np.clip(np.searchsorted(a["s0"], s, side="right") - 1, 0, len(a["s0"]) - 1)
    local = s - a["s0"][idx]
    h0 = a["h0"][idx]
    arc = a["arc"][idx]
    turn = a["turn"][idx]
    phi = a["phi0"][idx] + turn * local / a["r"][idx]
    heading = np.where(arc, phi + turn * (math.pi / 2.0), h0)
    heading = np.remainder(heading + math.pi, TWO_PI) - math.pi
    heading = np.where(heading <= -math.pi, heading + TWO_PI, heading)
    cx = np.where(arc, a["cx"][idx] + a["r"][idx] * np.cos(phi), a["x0"][idx] + np.cos(h0) * local)
    cy = np.where(arc, a["cy"][idx] + a["r"][idx] * np.sin(phi), a["y0"][idx] + np.sin(h0) * local)
    x = cx - np.sin(heading) * d
    y = cy + np.cos(heading) * d
    return x, y, heading
