"""Spatio-temporal conflict detection and resolution between planned trajectories.

Trajectories are compared at equal absolute timestamps. Resolution slows the
lower-priority car by a line search over the terminal-speed scale of its
target; the FIFO checkpoint gate is the baseline policy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import InvalidParameterError
from .frenet import FrenetState
from .planner import Obstacle, PlannerParams, Trajectory, plan
from .roadgraph import NodeKind, Path, RoadGraph

LAMBDAS = tuple(round(1.0 - 0.1 * i, 1) for i in range(11))


class PriorityRule(str, enum.Enum):
    EARLIER_ARRIVAL = "earlier_arrival"
    LOWER_ID = "lower_id"


class SeparationParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    d_safe: float = 1.2
    priority_rule: PriorityRule = PriorityRule.EARLIER_ARRIVAL
    vehicle_length: float = 0.9
    # extra clearance demanded when planning, on top of d_safe
    margin: float = 0.0
    merge_lookahead: float = 8.0
    max_rounds: int = 10
    # a pair already inside the threshold only conflicts if it gets closer still
    relax_initial: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not self.d_safe > 0:
            raise ValueError("d_safe must be > 0")
        if not self.d_safe > self.vehicle_length:
            raise ValueError("d_safe must exceed the vehicle length")
        if self.margin < 0 or self.merge_lookahead < 0 or self.max_rounds < 1:
            raise ValueError("margin and merge_lookahead must be >= 0, max_rounds >= 1")
        return self

    @property
    def threshold(self) -> float:
        return self.d_safe + self.margin

    def pair_threshold(self, d0: float, threshold: Optional[float] = None) -> float:
        """Threshold for a pair whose current distance is ``d0``."""
        th = self.threshold if threshold is None else threshold
        if self.relax_initial and d0 < th:
            return max(self.d_safe, d0 - 1e-6)
        return th


class ConflictKind(str, enum.Enum):
    REAR_END = "rear_end"
    CROSSING = "crossing"
    MERGING = "merging"


@dataclass(frozen=True)
class Conflict:
    car_a: int
    car_b: int
    # index into the common time window of the two trajectories
    frame_index: int
    distance: float
    kind: ConflictKind
    time: float = 0.0

    def __post_init__(self):
        if self.car_a >= self.car_b:
            raise InvalidParameterError("conflict cars must satisfy car_a < car_b")

    def involves(self, car_id: int) -> bool:
        return car_id in (self.car_a, self.car_b)

    def other(self, car_id: int) -> int:
        return self.car_b if car_id == self.car_a else self.car_a


# ---------------------------------------------------------------------------
# alignment


def _offset(a: Trajectory, b: Trajectory) -> int:
    """Frame offset of ``b`` relative to ``a`` on the shared clock."""
    if abs(a.dt - b.dt) > 1e-12:
        raise InvalidParameterError(f"mismatched dt: {a.dt} vs {b.dt}")
    u = (b.start_time - a.start_time) / a.dt
    k = round(u)
    if abs(u - k) > 1e-6:
        raise InvalidParameterError("trajectory start times are not aligned to a common dt grid")
    return int(k)


def _window(a: Trajectory, b: Trajectory):
    """Index slices of ``a`` and ``b`` covering their common timestamps, or None."""
    off = _offset(a, b)
    a0 = max(0, off)
    b0 = max(0, -off)
    n = min(len(a) - a0, len(b) - b0)
    if n <= 0:
        return None
    return slice(a0, a0 + n), slice(b0, b0 + n)


def pair_distances(a: Trajectory, b: Trajectory) -> Optional[np.ndarray]:
    """Center distances of two cars at their common timestamps."""
    w = _window(a, b)
    if w is None:
        return None
    sa, sb = w
    return np.hypot(a.x[sa] - b.x[sb], a.y[sa] - b.y[sb])


def min_separation(traj: Trajectory, others: Iterable[Trajectory]) -> float:
    best = math.inf
    for o in others:
        if o.car_id == traj.car_id:
            continue
        dist = pair_distances(traj, o)
        if dist is not None and len(dist):
            best = min(best, float(dist.min()))
    return best


def separated(traj: Trajectory, others: Sequence[Trajectory], p: SeparationParams) -> bool:
    """True when ``traj`` keeps the (pair) threshold from every other trajectory."""
    others = [o for o in others if o.car_id != traj.car_id]
    if others and _same_grid([traj] + others):
        X = np.stack([o.x for o in others])
        Y = np.stack([o.y for o in others])
        D = np.hypot(X - traj.x, Y - traj.y)
        th = p.threshold
        if p.relax_initial:
            th = np.where(D[:, 0] < th, np.maximum(p.d_safe, D[:, 0] - 1e-6), th)
        return bool((D.min(axis=1) >= th).all())
    for o in others:
        if o.car_id == traj.car_id:
            continue
        dist = pair_distances(traj, o)
        if dist is not None and len(dist) and dist.min() < p.pair_threshold(dist[0]):
            return False
    return True


# ---------------------------------------------------------------------------
# detection


def _edge_at(traj: Trajectory, k: int) -> Optional[str]:
    if traj.path is None or not traj.path.segments:
        return None
    return traj.path.segments[traj.path.segment_index(float(traj.s[k]))].id


def _edges_ahead(traj: Trajectory, k: int, lookahead: float) -> set:
    path = traj.path
    if path is None or not path.segments:
        return set()
    s = float(traj.s[k])
    i = path.segment_index(s)
    j = path.segment_index(min(s + lookahead, path.total_length))
    return {path.segments[m].id for m in range(i, j + 1)}


def classify(a: Trajectory, ka: int, b: Trajectory, kb: int, lookahead: float) -> ConflictKind:
    ea, eb = _edge_at(a, ka), _edge_at(b, kb)
    if ea is not None and ea == eb:
        return ConflictKind.REAR_END
    if _edges_ahead(a, ka, lookahead) & _edges_ahead(b, kb, lookahead):
        return ConflictKind.MERGING
    return ConflictKind.CROSSING


def _pair_conflict(a: Trajectory, b: Trajectory, p: SeparationParams,
                   threshold: float) -> Optional[Conflict]:
    if a.car_id > b.car_id:
        a, b = b, a
    w = _window(a, b)
    if w is None:
        return None
    sa, sb = w
    dist = np.hypot(a.x[sa] - b.x[sb], a.y[sa] - b.y[sb])
    bad = np.flatnonzero(dist < p.pair_threshold(dist[0], threshold))
    if not len(bad):
        return None
    k = int(bad[0])
    ka, kb = sa.start + k, sb.start + k
    kind = classify(a, ka, b, kb, p.merge_lookahead)
    return Conflict(a.car_id, b.car_id, k, float(dist[k]), kind,
                    a.start_time + ka * a.dt)


def detect(traj_i: Trajectory, trajectories: Iterable[Trajectory], p: SeparationParams,
           threshold: Optional[float] = None) -> list[Conflict]:
    """Conflicts of ``traj_i`` with every other trajectory.

    One conflict per pair at the first common timestamp where the center
    distance drops below ``threshold`` (default ``p.threshold``).
    """
    th = p.threshold if threshold is None else threshold
    out = []
    for o in trajectories:
        if o.car_id == traj_i.car_id:
            continue
        c = _pair_conflict(traj_i, o, p, th)
        if c is not None:
            out.append(c)
    out.sort(key=lambda c: (c.car_a, c.car_b))
    return out


def detect_all(trajectories: Iterable[Trajectory], p: SeparationParams,
               threshold: Optional[float] = None) -> list[Conflict]:
    """All pairwise conflicts, ordered by (car_a, car_b)."""
    th = p.threshold if threshold is None else threshold
    trajs = sorted(trajectories, key=lambda t: t.car_id)
    out = []
    if _same_grid(trajs):
        # common fast path: one stacked distance computation
        X = np.stack([t.x for t in trajs])
        Y = np.stack([t.y for t in trajs])
        D = np.hypot(X[:, None, :] - X[None, :, :], Y[:, None, :] - Y[None, :, :])
        n = len(trajs)
        iu, ju = np.triu_indices(n, 1)
        hit = (D[iu, ju] < th).any(axis=1)
        for i, j in zip(iu[hit], ju[hit]):
            c = _pair_conflict(trajs[i], trajs[j], p, th)
            if c is not None:
                out.append(c)
        return out
    for i in range(len(trajs)):
        for j in range(i + 1, len(trajs)):
            c = _pair_conflict(trajs[i], trajs[j], p, th)
            if c is not None:
                out.append(c)
    return out


def _same_grid(trajs: Sequence[Trajectory]) -> bool:
    if len(trajs) < 2:
        return False
    t0 = trajs[0]
    return all(t.dt == t0.dt and t.start_time == t0.start_time and len(t) == len(t0) for t in trajs)


# ---------------------------------------------------------------------------
# priority


def arrival_time(traj: Trajectory, point: tuple[float, float], start_time: Optional[float] = None) -> float:
    """Predicted time at which ``traj`` reaches ``point`` (absolute clock).

    Arrival is when the point stops being ahead of the car along its
    heading. A car already past the point gets a negative time, a car that
    never reaches it within the horizon gets infinity.
    """
    px, py = point
    proj = (px - traj.x) * np.cos(traj.heading) + (py - traj.y) * np.sin(traj.heading)
    t0 = traj.start_time
    if proj[0] <= 0.0:
        return t0 + float(proj[0]) / max(float(traj.v[0]), 0.1)
    idx = np.flatnonzero(proj <= 0.0)
    if not len(idx):
        return math.inf
    m = int(idx[0])
    f = proj[m - 1] / (proj[m - 1] - proj[m])
    return t0 + (m - 1 + float(f)) * traj.dt


def priority(a: Trajectory, b: Trajectory, conflict: Conflict, p: SeparationParams) -> tuple[int, int]:
    """Return ``(winner, loser)`` car ids for a conflict between ``a`` and ``b``."""
    if p.priority_rule is PriorityRule.LOWER_ID:
        lo, hi = sorted((a.car_id, b.car_id))
        return lo, hi
    w = _window(a, b)
    ka = w[0].start + conflict.frame_index
    kb = w[1].start + conflict.frame_index
    point = (0.5 * (a.x[ka] + b.x[kb]), 0.5 * (a.y[ka] + b.y[kb]))
    ra = (arrival_time(a, point), a.car_id)
    rb = (arrival_time(b, point), b.car_id)
    return (a.car_id, b.car_id) if ra < rb else (b.car_id, a.car_id)


def _conflict_point(a: Trajectory, b: Trajectory, conflict: Conflict) -> tuple[float, float]:
    w = _window(a, b)
    ka = w[0].start + conflict.frame_index
    kb = w[1].start + conflict.frame_index
    return (0.5 * (a.x[ka] + b.x[kb]), 0.5 * (a.y[ka] + b.y[kb]))


def ticket_priority(a: Trajectory, b: Trajectory, conflict: Conflict, p: SeparationParams,
                    tickets: dict) -> tuple[int, int]:
    """Priority through persistent tickets.

    A car without a ticket receives one equal to its absolute arrival time at
    the conflict point. Comparing ``(ticket, car_id)`` is a total order, so
    precedence cannot form a cycle, and since tickets outlive a single tick a
    waiting car is not overtaken by later arrivals.
    """
    if p.priority_rule is PriorityRule.LOWER_ID:
        return priority(a, b, conflict, p)
    point = _conflict_point(a, b, conflict)
    keys = []
    for t in (a, b):
        if t.car_id not in tickets:
            eta = arrival_time(t, point)
            if math.isinf(eta):
                keys.append((eta, t.car_id))
                continue
            tickets[t.car_id] = eta
        keys.append((tickets[t.car_id], t.car_id))
    return (a.car_id, b.car_id) if keys[0] < keys[1] else (b.car_id, a.car_id)


# ---------------------------------------------------------------------------
# replanning


@dataclass
class PlanRequest:
    """Everything needed to re-run the planner for one car."""

    path: Path
    fs: FrenetState
    leader: Optional[FrenetState] = None
    obstacles: Sequence[Obstacle] = ()
    speed_limit: Optional[float] = None
    stops: Sequence[float] = ()
    car_id: int = 0
    start_time: float = 0.0

    def make(self, params: PlannerParams, scale: float = 1.0,
             ceiling: Optional[np.ndarray] = None) -> Trajectory:
        return plan(self.path, self.fs, params, self.leader, self.obstacles, self.speed_limit,
                    stops=self.stops, car_id=self.car_id, start_time=self.start_time,
                    target_scale=scale, ceiling=ceiling)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "PlanRequest":
        if traj.path is None:
            raise InvalidParameterError("trajectory carries no path to replan along")
        fs = FrenetState(float(traj.s[0]), float(traj.d[0]), float(traj.v[0]), 0.0, 0.0)
        return cls(traj.path, fs, car_id=traj.car_id, start_time=traj.start_time)


def replan(
    original: Trajectory,
    others: Iterable[Trajectory],
    p: SeparationParams,
    params: PlannerParams,
    request: Optional[PlanRequest] = None,
    conflicts: Optional[Sequence[Conflict]] = None,
) -> Trajectory:
    """Slow ``original`` until it keeps ``p.threshold`` from all ``others``.

    Scales 1.0, 0.9, ..., 0.0 of the target are tried in turn and the first
    (largest) feasible one is returned. The original speed profile is a
    per-frame ceiling, so the yielder never gets ahead of its own plan.
    Scale 0 (brake to a stop) is the fallback when nothing is feasible.
    """
    if conflicts is not None and not conflicts:
        return original
    others = [o for o in others if o.car_id != original.car_id]
    if separated(original, others, p):
        # scale 1.0 reproduces the original plan
        return original
    req = request or PlanRequest.from_trajectory(original)
    fallback = None
    for lam in LAMBDAS[1:]:
        cand = req.make(params, lam, ceiling=original.v)
        if lam == 0.0:
            fallback = cand
        if separated(cand, others, p):
            cand.note = "yield"
            return cand
    fallback.note = "yield-stop"
    return fallback


@dataclass
class Resolution:
    trajectories: dict
    rounds: int = 0
    forced: list = field(default_factory=list)
    remaining: list = field(default_factory=list)
    involved: set = field(default_factory=set)


def resolve_all(
    trajectories: Iterable[Trajectory],
    p: SeparationParams,
    params: PlannerParams,
    requests: Optional[Mapping[int, PlanRequest]] = None,
    tickets: Optional[dict] = None,
) -> Resolution:
    """Detect and replan in priority order until no conflicts remain.

    Each round walks the detected conflicts by time; the loser of each one
    is replanned against everyone else while the winner is left untouched.
    After ``p.max_rounds`` rounds every car still losing a conflict is
    forced to brake to a stop.

    When ``tickets`` is given, precedence follows :func:`ticket_priority`
    and the dict is updated in place so the caller can keep it across calls.
    """

    def rank(c):
        a, b = current[c.car_a], current[c.car_b]
        if tickets is None:
            return priority(a, b, c, p)
        return ticket_priority(a, b, c, p, tickets)

    current = {t.car_id: t for t in trajectories}
    requests = dict(requests or {})
    res = Resolution(current)
    for rnd in range(p.max_rounds):
        conflicts = detect_all(current.values(), p)
        if not conflicts:
            res.rounds = rnd
            return res
        touched = set()
        for c in sorted(conflicts, key=lambda c: (c.time, c.car_a, c.car_b)):
            if c.car_a in touched or c.car_b in touched:
                continue
            winner, loser = rank(c)
            res.involved.update((winner, loser))
            others = [t for cid, t in current.items() if cid != loser]
            new = replan(current[loser], others, p, params, requests.get(loser))
            if new.note == "yield-stop" and not separated(new, [current[winner]], p):
                # the loser cannot get clear even by stopping: let the winner yield
                others = [t for cid, t in current.items() if cid != winner]
                alt = replan(current[winner], others, p, params, requests.get(winner))
                if alt.note == "yield":
                    current[winner] = alt
                    touched.add(winner)
                    if tickets is not None and winner in tickets:
                        # keep the swap sticky
                        tickets[loser] = min(tickets.get(loser, math.inf), tickets[winner] - 1e-3)
                    continue
            current[loser] = new
            touched.add(loser)
    res.rounds = p.max_rounds
    conflicts = detect_all(current.values(), p)
    for c in conflicts:
        _, loser = rank(c)
        if current[loser].note not in ("yield-stop", "forced-stop"):
            req = requests.get(loser) or PlanRequest.from_trajectory(current[loser])
            stop = req.make(params, 0.0, ceiling=current[loser].v)
            stop.note = "forced-stop"
            current[loser] = stop
            res.forced.append(loser)
    res.remaining = detect_all(current.values(), p)
    return res


# ---------------------------------------------------------------------------
# FIFO checkpoint baseline


@dataclass(frozen=True)
class Zone:
    node: str
    center: tuple[float, float]
    radius: float


class FifoGate:
    """First-come-first-served checkpoint zones at intersection entries and merges.

    A car registers for a zone once its path comes within
    ``check_distance`` of the zone. The earliest registration owns the zone;
    same-tick registrations go to the car nearer the zone, then the lower
    id. All others hold just outside it until the owner has left.
    """

    # a waiting car stays d_safe clear of the zone it waits for
    HOLD_CLEARANCE = 1.2

    def __init__(self, graph: RoadGraph, radius: float = 4.0, check_distance: float = 8.0):
        if radius <= 0 or check_distance < 0:
            raise InvalidParameterError("zone radius must be > 0 and check distance >= 0")
        self.radius = radius
        self.check_distance = check_distance
        kinds = (NodeKind.INTERSECTION_ENTRY, NodeKind.MERGE)
        self.zones = [Zone(n.id, n.position, radius)
                      for n in sorted(graph.nodes.values(), key=lambda n: n.id) if n.kind in kinds]
        # zone -> car -> (registration time, distance to the zone then)
        self.registered: dict[str, dict[int, tuple[float, float]]] = {z.node: {} for z in self.zones}
        self._intervals: dict[int, tuple[Path, list]] = {}

    def intervals(self, path: Path) -> list[tuple[str, float, float]]:
        """``(zone, s_in, s_out)`` stretches of ``path`` inside each zone, by s_in."""
        key = id(path)
        hit = self._intervals.get(key)
        if hit is not None and hit[0] is path:
            return hit[1]
        wps = path.waypoints
        s = np.array([w.s_offset for w in wps])
        xy = np.array([w.position for w in wps])
        out = []
        for z in self.zones:
            inside = np.hypot(xy[:, 0] - z.center[0], xy[:, 1] - z.center[1]) <= z.radius
            if not inside.any():
                continue
            # split into contiguous runs
            edges = np.flatnonzero(np.diff(inside.astype(int)))
            starts = [0] if inside[0] else []
            ends = []
            for e in edges:
                if inside[e + 1]:
                    starts.append(e + 1)
                else:
                    ends.append(e)
            if inside[-1]:
                ends.append(len(inside) - 1)
            for a, b in zip(starts, ends):
                out.append((z.node, float(s[a]), float(s[b])))
        out.sort(key=lambda r: (r[1], r[0]))
        if len(self._intervals) > 256:
            self._intervals.clear()
        self._intervals[key] = (path, out)
        return out

    def owner(self, zone: str) -> Optional[int]:
        reg = self.registered[zone]
        if not reg:
            return None
        return min(reg.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def update(self, now: float, cars: Mapping[int, tuple[Path, float]]) -> dict[int, Optional[float]]:
        """Advance the gate and return a hold position (s) per car, or None to go.

        ``cars`` maps car id to its ``(path, s)``.
        """
        # forget cars that have left a zone and are not about to re-enter it
        for zone, reg in self.registered.items():
            for cid in list(reg):
                if cid not in cars:
                    del reg[cid]
                    continue
                path, s = cars[cid]
                if not any(z == zone and s_out >= s and s_in - s <= self.check_distance
                           for z, s_in, s_out in self.intervals(path)):
                    del reg[cid]
        # claim zones in path order, stopping at the first one owned by someone else
        for cid in sorted(cars):
            path, s = cars[cid]
            for zone, s_in, s_out in self.intervals(path):
                if s_out < s:
                    continue
                if s_in - s > self.check_distance:
                    break
                self.registered[zone].setdefault(cid, (now, max(s_in - s, 0.0)))
                if self.owner(zone) != cid:
                    break
        holds: dict[int, Optional[float]] = {}
        for cid in sorted(cars):
            path, s = cars[cid]
            hold = None
            for zone, s_in, s_out in self.intervals(path):
                if s_out < s or cid not in self.registered[zone]:
                    continue
                if self.owner(zone) != cid:
                    hold = max(s_in - self.HOLD_CLEARANCE, s)
                    break
            holds[cid] = hold
        return holds


def fifo_gate(graph: RoadGraph, cars: Mapping[int, tuple[Path, float]], radius: float = 4.0,
              now: float = 0.0, gate: Optional[FifoGate] = None) -> dict[int, Optional[float]]:
    """One-shot FIFO decision; pass a persistent ``gate`` to keep claims across calls."""
    gate = gate or FifoGate(graph, radius)
    return gate.update(now, cars)
