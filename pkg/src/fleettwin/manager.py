"""Centralized traffic manager: routes, localization, planning and conflict handling.

The manager only knows what reaches it over the bus: vehicle poses from
BSMs and light states from SPaT. Each tick it refreshes routes, localizes
every car on its path, plans a trajectory per car and makes the set
conflict-free (optimized mode) or applies FIFO holds (baseline mode).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conflict import FifoGate, PlanRequest, SeparationParams, detect_all, resolve_all
from .errors import NoRouteError, OffPathError
from .frenet import FrenetState, project, to_frenet
from .planner import Obstacle, PlannerParams, Trajectory, quintic_eval
from .roadgraph import Path, RoadGraph, a_star, random_goal, wrap_angle
from .v2x import LightState, MessageKind, PreemptionRequest, SPaT, V2XMessage
from .vehicle import VehicleState


class ManagerMode(str, enum.Enum):
    OPTIMIZED = "optimized"
    FIFO = "fifo_baseline"


@dataclass
class CarRecord:
    car_id: int
    rng: np.random.Generator
    path: Path
    # goals on the path as (node, s of arrival), earliest first
    goals: list = field(default_factory=list)
    scripted_goals: list = field(default_factory=list)
    emergency: bool = False
    state: Optional[VehicleState] = None
    state_time: float = -math.inf
    hint: Optional[float] = None
    fs: Optional[FrenetState] = None
    traj: Optional[Trajectory] = None
    route_start: float = 0.0
    preempted: set = field(default_factory=set)


@dataclass
class TickOutput:
    commands: list = field(default_factory=list)
    preemptions: list = field(default_factory=list)
    events: list = field(default_factory=list)


class TrafficManager:
    # keep at least this much path ahead of each car so the plan never ends early
    MIN_AHEAD = 40.0
    GOAL_TOLERANCE = 1.0
    LEADER_LOOKAHEAD = 15.0
    LIGHT_LOOKAHEAD = 15.0
    COMFORT_DECEL = 2.0
    LATERAL_CONTINUITY = 0.25
    TICKET_EXPIRY = 1.0

    def __init__(
        self,
        graph: RoadGraph,
        params: PlannerParams,
        separation: SeparationParams,
        mode: ManagerMode = ManagerMode.OPTIMIZED,
        obstacles: Sequence[Obstacle] = (),
        light_nodes: Optional[dict] = None,
        light_greens: Optional[dict] = None,
        workers: int = 1,
        zone_radius: float = 4.0,
        corridor: float = 2.0,
    ):
        self.graph = graph
        self.params = params
        self.sep = separation
        self.mode = ManagerMode(mode)
        self.obstacles = tuple(obstacles)
        # light id -> entry nodes whose stop line it controls
        self.light_nodes = dict(light_nodes or {})
        # light id -> phase index to request on preemption
        self.light_greens = dict(light_greens or {})
        self._node_light = {n: lid for lid, nodes in self.light_nodes.items() for n in nodes}
        self.spat: dict[str, tuple[SPaT, float]] = {}
        self.cars: dict[int, CarRecord] = {}
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.gate = FifoGate(graph, zone_radius) if self.mode is ManagerMode.FIFO else None
        self.corridor = corridor
        self.unmanaged_ticks = 0
        self.unresolved = 0
        # right-of-way tickets kept while a car stays in conflict
        self.tickets: dict = {}
        self._last_conflict: dict = {}
        self.map_digest = graph.digest()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # ------------------------------------------------------------------
    # setup and inputs

    def add_car(self, car_id: int, rng: np.random.Generator, start_edge: str,
                goals: Sequence[str] = (), emergency: bool = False) -> CarRecord:
        if start_edge not in self.graph.edges:
            raise NoRouteError(f"unknown start edge {start_edge!r}")
        rec = CarRecord(car_id, rng, Path(self.graph, [start_edge]),
                        scripted_goals=list(goals), emergency=emergency)
        self.cars[car_id] = rec
        self._extend(rec, 0.0)
        return rec

    def receive(self, messages: Sequence[V2XMessage]) -> None:
        for m in messages:
            if m.kind is MessageKind.BSM:
                rec = self.cars.get(m.sender)
                if rec is not None and m.created > rec.state_time:
                    rec.state, rec.state_time = m.payload, m.created
            elif m.kind is MessageKind.SPAT:
                prev = self.spat.get(m.payload.light_id)
                if prev is None or m.created > prev[1]:
                    self.spat[m.payload.light_id] = (m.payload, m.created)

    # ------------------------------------------------------------------
    # routes

    def _draw_goal(self, rec: CarRecord, node: str) -> str:
        while rec.scripted_goals:
            g = rec.scripted_goals.pop(0)
            if g != node:
                return g
        return random_goal(self.graph, node, rec.rng)

    def _extend(self, rec: CarRecord, s: float) -> None:
        """Append routes to new goals until enough path lies ahead of ``s``."""
        while rec.path.total_length - s < self.MIN_AHEAD:
            node = rec.path.node_sequence[-1][0]
            goal = self._draw_goal(rec, node)
            route = a_star(self.graph, node, goal)
            rec.path = Path(self.graph, rec.path.edges + route.edges)
            rec.goals.append((goal, rec.path.total_length))

    def _rebase(self, rec: CarRecord, s: float) -> float:
        """Drop the edges behind ``s``; returns ``s`` in the new coordinates."""
        k = rec.path.segment_index(s)
        if k == 0:
            return s
        off = rec.path.edge_starts[k]
        rec.path = Path(self.graph, rec.path.edges[k:])
        rec.goals = [(g, gs - off) for g, gs in rec.goals]
        return s - off

    def _reroute(self, rec: CarRecord, st: VehicleState) -> None:
        """Restart the path from the edge nearest the car, keeping the current goal."""
        best = None
        for eid in sorted(self.graph.edges):
            e = self.graph.edges[eid]
            p = project(Path(self.graph, [eid]), st.x, st.y)
            h = e.pose_at(p.s - 0.0)[2]
            misalign = abs(wrap_angle(st.heading - h))
            key = (p.distance + (10.0 if misalign > math.pi / 2 else 0.0), eid)
            if best is None or key < best[0]:
                best = (key, eid)
        eid = best[1]
        goal = rec.goals[0][0] if rec.goals else None
        rec.path = Path(self.graph, [eid])
        rec.goals = []
        if goal is not None:
            node = self.graph.edges[eid].to_node
            if node != goal:
                route = a_star(self.graph, node, goal)
                rec.path = Path(self.graph, rec.path.edges + route.edges)
            rec.goals.append((goal, rec.path.total_length))
        rec.hint = None
        rec.traj = None
        self._extend(rec, 0.0)

    # ------------------------------------------------------------------
    # per-car steps

    def _localize(self, rec: CarRecord, now: float, out: TickOutput) -> Optional[FrenetState]:
        st = rec.state
        try:
            fs = to_frenet(rec.path, st.pose, st.v, corridor=self.corridor, hint=rec.hint)
        except OffPathError as exc:
            out.events.append({"event": "reroute", "time": now, "car_id": rec.car_id,
                               "distance": exc.distance})
            self._reroute(rec, st)
            try:
                fs = to_frenet(rec.path, st.pose, st.v, corridor=self.corridor)
            except OffPathError:
                return None
        rec.hint = fs.s
        # extrapolate the stale report to the planning instant
        age = max(0.0, now - rec.state_time)
        fs.s = min(fs.s + max(fs.s_dot, 0.0) * age, rec.path.total_length)
        prev = rec.traj
        if prev is not None:
            fs.s_ddot = float(np.interp(now, prev.start_time + prev.t, prev.a))
            # continue the previous lateral plan while the car is close to it,
            # so replanning does not restart the convergence from the measured offset
            tau = min(max(now - prev.start_time, 0.0), prev.d_duration)
            d_plan = float(quintic_eval(prev.d_coeffs, tau))
            if abs(d_plan - fs.d) < self.LATERAL_CONTINUITY:
                fs.d = d_plan
                fs.d_dot = float(quintic_eval(prev.d_coeffs, tau, 1)) if tau < prev.d_duration else 0.0
        return fs

    def _goals(self, rec: CarRecord, fs: FrenetState, now: float, out: TickOutput) -> FrenetState:
        done = False
        while rec.goals and fs.s >= rec.goals[0][1] - self.GOAL_TOLERANCE:
            goal, _ = rec.goals.pop(0)
            out.events.append({"event": "route_completed", "time": now, "car_id": rec.car_id,
                               "goal": goal, "travel_time": now - rec.route_start})
            rec.route_start = now
            done = True
        if done:
            new_s = self._rebase(rec, fs.s)
            if rec.hint is not None:
                rec.hint += new_s - fs.s
            fs.s = new_s
        self._extend(rec, fs.s)
        return fs

    def _leader(self, rec: CarRecord, fs: FrenetState, where: dict) -> Optional[FrenetState]:
        path = rec.path
        i = path.segment_index(fs.s)
        ahead = {}
        j = i
        while j < len(path.segments) and path.edge_starts[j] <= fs.s + self.LEADER_LOOKAHEAD:
            ahead.setdefault(path.segments[j].id, j)
            j += 1
        best = None
        for cid, (eid, local, v) in where.items():
            if cid == rec.car_id or eid not in ahead:
                continue
            s_on = path.edge_starts[ahead[eid]] + local
            if s_on <= fs.s:
                continue
            if best is None or s_on < best.s:
                best = FrenetState(s_on, 0.0, v)
        return best

    def _light_stops(self, rec: CarRecord, fs: FrenetState, now: float, out: TickOutput) -> list:
        stops = []
        if not self._node_light:
            return stops
        gap = self.params.standstill_gap
        for node, s_line in rec.path.node_sequence:
            if s_line <= fs.s:
                continue
            if s_line > fs.s + self.LIGHT_LOOKAHEAD:
                break
            lid = self._node_light.get(node)
            if lid is None:
                continue
            known = self.spat.get(lid)
            state = known[0].state if known is not None else None
            if rec.emergency:
                if state is not LightState.GREEN and lid not in rec.preempted and lid in self.light_greens:
                    rec.preempted.add(lid)
                    out.preemptions.append(PreemptionRequest(lid, self.light_greens[lid]))
                continue
            stop_at = s_line - gap
            if fs.s > stop_at + 0.1:
                continue  # already committed past the stop position
            v = max(fs.s_dot, 0.0)
            if state is LightState.GREEN:
                continue
            if state is LightState.YELLOW and stop_at - fs.s < v * v / (2.0 * self.COMFORT_DECEL):
                continue
            stops.append(stop_at)
        return stops

    # ------------------------------------------------------------------

    def tick(self, now: float) -> TickOutput:
        out = TickOutput()
        active = []
        for cid in sorted(self.cars):
            rec = self.cars[cid]
            if rec.state is None:
                self.unmanaged_ticks += 1
                continue
            fs = self._localize(rec, now, out)
            if fs is None:
                self.unmanaged_ticks += 1
                continue
            rec.fs = self._goals(rec, fs, now, out)
            active.append(rec)

        where = {}
        for rec in active:
            path, s = rec.path, rec.fs.s
            k = path.segment_index(s)
            where[rec.car_id] = (path.segments[k].id, s - path.edge_starts[k], max(rec.fs.s_dot, 0.0))

        holds = {}
        if self.gate is not None:
            holds = self.gate.update(now, {r.car_id: (r.path, r.fs.s) for r in active})

        requests = {}
        for rec in active:
            stops = self._light_stops(rec, rec.fs, now, out)
            hold = holds.get(rec.car_id)
            if hold is not None:
                stops.append(hold)
            requests[rec.car_id] = PlanRequest(
                rec.path, rec.fs, self._leader(rec, rec.fs, where), self.obstacles, None,
                tuple(stops), rec.car_id, now)

        ids = [r.car_id for r in active]
        if self._pool is not None:
            trajs = list(self._pool.map(lambda c: requests[c].make(self.params), ids))
        else:
            trajs = [requests[c].make(self.params) for c in ids]

        if self.mode is ManagerMode.OPTIMIZED and len(trajs) > 1:
            res = resolve_all(trajs, self.sep, self.params, requests, self.tickets)
            final = res.trajectories
            for cid in res.involved:
                self._last_conflict[cid] = now
            for cid in list(self.tickets):
                if now - self._last_conflict.get(cid, -math.inf) > self.TICKET_EXPIRY:
                    del self.tickets[cid]
            if res.remaining:
                self.unresolved += len(res.remaining)
        else:
            final = {t.car_id: t for t in trajs}
        for rec in active:
            rec.traj = final[rec.car_id]
            out.commands.append(rec.traj)
        return out

    def buffer_conflicts(self, threshold: Optional[float] = None):
        trajs = [r.traj for r in self.cars.values() if r.traj is not None]
        return detect_all(trajs, self.sep, threshold)
