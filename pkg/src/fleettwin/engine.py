"""Fixed-timestep simulation loop binding vehicles, manager, lights and the channel."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .conflict import SeparationParams
from .errors import ConfigError, InvariantError
from .frenet import project
from .manager import ManagerMode, TrafficManager
from .planner import Obstacle, ObstacleKind, PlannerParams
from .roadgraph import NodeKind, RoadGraph, build_default_map, load_map
from .v2x import (Bus, ChannelModel, LightState, MapDigest, MessageKind, TrafficLight,
                  light_step, preempt, spat_of)
from .vehicle import (Control, NoiseModel, VehicleParams, VehicleState, perturb, pure_pursuit,
                      step)

# ---------------------------------------------------------------------------
# configuration


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseConfig(_Model):
    pos_sigma: float = Field(0.02, ge=0.0)
    heading_sigma: float = Field(0.01, ge=0.0)
    enabled: bool = True

    def model(self) -> NoiseModel:
        return NoiseModel(self.pos_sigma, self.heading_sigma, self.enabled)


class LightConfig(_Model):
    id: str
    # entry nodes whose stop line this light controls
    nodes: list[str]
    phases: list[tuple[LightState, float]]
    offset: float = 0.0
    # phase index requested by emergency preemption (default: first green)
    preempt_phase: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.phases or any(d <= 0 for _, d in self.phases):
            raise ValueError("phases must be non-empty with durations > 0")
        if self.preempt_phase is not None and not 0 <= self.preempt_phase < len(self.phases):
            raise ValueError("preempt_phase out of range")
        return self

    @property
    def green_phase(self) -> Optional[int]:
        if self.preempt_phase is not None:
            return self.preempt_phase
        for i, (s, _) in enumerate(self.phases):
            if s is LightState.GREEN:
                return i
        return None


class ObstacleConfig(_Model):
    position: tuple[float, float]
    radius: float = Field(gt=0.0)
    kind: ObstacleKind = ObstacleKind.STATIC


class CarConfig(_Model):
    edge: str
    offset: float = Field(0.0, ge=0.0)
    speed: float = Field(0.0, ge=0.0)
    goals: list[str] = []
    emergency: bool = False


def _default_planner() -> PlannerParams:
    # center-to-center standstill gap kept above the separation minimum
    return PlannerParams(standstill_gap=2.0)


def _default_separation() -> SeparationParams:
    return SeparationParams(margin=0.5, relax_initial=True)


class SimConfig(_Model):
    seed: int = Field(0, ge=0, lt=2**64)
    duration: float = Field(600.0, gt=0.0)
    vehicle_dt: float = Field(0.02, gt=0.0)
    planning_period: float = Field(0.2, gt=0.0)
    bsm_period: float = Field(0.1, gt=0.0)
    spat_period: float = Field(0.1, gt=0.0)
    n_cars: int = Field(10, ge=1)
    mode: ManagerMode = ManagerMode.OPTIMIZED
    ideal: bool = False
    channel: ChannelModel = ChannelModel()
    noise: NoiseConfig = NoiseConfig()
    planner: PlannerParams = Field(default_factory=_default_planner)
    separation: SeparationParams = Field(default_factory=_default_separation)
    vehicle: VehicleParams = VehicleParams()
    map_file: Optional[str] = None
    map_spacing: float = Field(0.5, gt=0.0)
    lights: list[LightConfig] = []
    obstacles: list[ObstacleConfig] = []
    cars: list[CarConfig] = []
    workers: int = Field(1, ge=1)
    zone_radius: float = Field(4.0, gt=0.0)
    deadlock_time: float = Field(10.0, gt=0.0)
    deadlock_speed: float = Field(0.01, gt=0.0)
    log_messages: bool = True

    @model_validator(mode="after")
    def _check(self):
        dt = self.vehicle_dt
        if not dt <= self.planner.dt <= self.planning_period:
            raise ValueError("need vehicle_dt <= planner.dt <= planning_period")
        for name in ("planning_period", "bsm_period", "spat_period", "duration"):
            ratio = getattr(self, name) / dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} must be an integer multiple of vehicle_dt")
        ratio = self.planner.dt / dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("planner.dt must be an integer multiple of vehicle_dt")
        if self.cars and len(self.cars) != self.n_cars:
            raise ValueError(f"n_cars={self.n_cars} but {len(self.cars)} cars are listed")
        return self

    def ticks(self, period: float) -> int:
        return int(round(period / self.vehicle_dt))


def load_config(doc: dict, **overrides) -> SimConfig:
    """Validate a scenario document; errors name the offending field path."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    doc = dict(doc)
    for k, v in overrides.items():
        if v is not None:
            doc[k] = v
    if "cars" in doc and "n_cars" not in doc and isinstance(doc["cars"], list) and doc["cars"]:
        doc["n_cars"] = len(doc["cars"])
    try:
        return SimConfig.model_validate(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid scenario: " + "; ".join(lines)) from None


# ---------------------------------------------------------------------------
# results


@dataclass
class Metrics:
    completed_routes: int = 0
    travel_times: list = field(default_factory=list)
    throughput: float = 0.0
    min_separation: float = math.inf
    separation_violations: int = 0
    deadlock_events: int = 0
    mean_speed: float = 0.0
    message_stats: dict = field(default_factory=dict)
    cross_track_error: dict = field(default_factory=dict)
    mean_response_delay: float = 0.0
    routes_per_car: dict = field(default_factory=dict)
    unmanaged_ticks: int = 0
    unresolved_conflicts: int = 0
    reroutes: int = 0

    def to_dict(self) -> dict:
        def r(x):
            return None if x is None or (isinstance(x, float) and math.isinf(x)) else round(x, 9)
        return {
            "completed_routes": self.completed_routes,
            "travel_times": [r(t) for t in self.travel_times],
            "throughput": r(self.throughput),
            "min_separation": r(self.min_separation),
            "separation_violations": self.separation_violations,
            "deadlock_events": self.deadlock_events,
            "mean_speed": r(self.mean_speed),
            "message_stats": {k: (r(v) if isinstance(v, float) else v)
                              for k, v in self.message_stats.items()},
            "cross_track_error": {k: r(v) for k, v in self.cross_track_error.items()},
            "mean_response_delay": r(self.mean_response_delay),
            "routes_per_car": {str(k): v for k, v in sorted(self.routes_per_car.items())},
            "unmanaged_ticks": self.unmanaged_ticks,
            "unresolved_conflicts": self.unresolved_conflicts,
            "reroutes": self.reroutes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class RunResult:
    metrics: Metrics
    trace: Optional[list] = None
    events: list = field(default_factory=list)

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            fh.write(self.metrics.to_json())
        with open(os.path.join(out_dir, "trace.csv"), "w") as fh:
            fh.write(TRACE_HEADER)
            fh.writelines(self.trace or ())
        with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")


TRACE_HEADER = "time,car_id,x,y,heading,v,s,d,edge_id,has_cmd,cmd_note\n"


# ---------------------------------------------------------------------------
# setup helpers


def build_map(cfg: SimConfig) -> RoadGraph:
    if cfg.map_file:
        return load_map(cfg.map_file)
    return build_default_map(cfg.map_spacing)


def spawn_positions(graph: RoadGraph, n: int, rng: np.random.Generator,
                    min_gap: float = 5.0) -> list[CarConfig]:
    """Spread ``n`` cars at rest over plain lane edges, at least ``min_gap`` apart."""
    plain = sorted(
        eid for eid, e in graph.edges.items()
        if graph.nodes[e.from_node].kind is NodeKind.LANE_POINT
        and graph.nodes[e.to_node].kind is NodeKind.LANE_POINT and e.length >= 2.0)
    order = [plain[i] for i in rng.permutation(len(plain))]
    chosen: list[CarConfig] = []
    points: list[tuple[float, float]] = []
    for eid in order:
        e = graph.edges[eid]
        x, y, _ = e.pose_at(0.5 * e.length)
        if all(math.hypot(x - px, y - py) >= min_gap for px, py in points):
            chosen.append(CarConfig(edge=eid, offset=0.5 * e.length))
            points.append((x, y))
        if len(chosen) == n:
            return chosen
    raise ConfigError(f"cannot place {n} cars {min_gap} m apart on this map")


@dataclass
class _Car:
    state: VehicleState
    cmd: object = None
    cmd_created: float = -math.inf
    cmd_used: bool = True
    hint: Optional[float] = None
    path_id: int = 0
    routes: int = 0


# ---------------------------------------------------------------------------
# the loop


def run(cfg: SimConfig, record_trace: bool = False) -> RunResult:
    """Simulate ``cfg`` and return metrics (and the trace rows when requested)."""
    graph = build_map(cfg)
    ss = np.random.SeedSequence(cfg.seed)
    s_routes, s_channel, s_noise, s_spawn = ss.spawn(4)

    channel = ChannelModel.ideal() if cfg.ideal else cfg.channel
    noise = NoiseModel(0.0, 0.0, False) if cfg.ideal else cfg.noise.model()
    events: list = []
    bus = Bus(channel, np.random.default_rng(s_channel), log=cfg.log_messages)
    bus.log = events

    car_cfgs = list(cfg.cars) or spawn_positions(graph, cfg.n_cars, np.random.default_rng(s_spawn))
    for cc in car_cfgs:
        if cc.edge not in graph.edges:
            raise ConfigError(f"cars: unknown edge {cc.edge!r}")
        if cc.offset > graph.edges[cc.edge].length:
            raise ConfigError(f"cars: offset {cc.offset} beyond edge {cc.edge}")
        for g in cc.goals:
            if g not in graph.nodes:
                raise ConfigError(f"cars: unknown goal node {g!r}")
    for lc in cfg.lights:
        for n in lc.nodes:
            if n not in graph.nodes:
                raise ConfigError(f"lights.{lc.id}: unknown node {n!r}")

    lights = {lc.id: TrafficLight.with_offset(lc.id, lc.phases, lc.offset) for lc in cfg.lights}
    obstacles = [Obstacle(tuple(o.position), o.radius, o.kind) for o in cfg.obstacles]
    mgr = TrafficManager(
        graph, cfg.planner, cfg.separation, cfg.mode, obstacles,
        light_nodes={lc.id: tuple(lc.nodes) for lc in cfg.lights},
        light_greens={lc.id: lc.green_phase for lc in cfg.lights if lc.green_phase is not None},
        workers=cfg.workers, zone_radius=cfg.zone_radius)

    vp = cfg.vehicle
    route_seeds = s_routes.spawn(len(car_cfgs))
    noise_rngs = [np.random.default_rng(s) for s in s_noise.spawn(len(car_cfgs))]
    cars: list[_Car] = []
    for cid, cc in enumerate(car_cfgs):
        mgr.add_car(cid, np.random.default_rng(route_seeds[cid]), cc.edge, cc.goals, cc.emergency)
        x, y, h = graph.edges[cc.edge].pose_at(cc.offset)
        cars.append(_Car(VehicleState(cid, x, y, h, cc.speed, 0.0, vp.wheelbase, vp.length, vp.width)))

    n = len(cars)
    dt = cfg.vehicle_dt
    n_ticks = cfg.ticks(cfg.duration)
    every_plan = cfg.ticks(cfg.planning_period)
    every_bsm = cfg.ticks(cfg.bsm_period)
    every_spat = cfg.ticks(cfg.spat_period)
    bx0, by0, bx1, by1 = graph.bounding_box()
    d_safe = cfg.separation.d_safe
    iu, ju = np.triu_indices(n, 1)

    m = Metrics()
    trace = [] if record_trace else None
    xte = {False: [0.0, 0], True: [0.0, 0]}
    speed_sum = 0.0
    violating = set()
    stall_since = None
    stall_flagged = False
    delay_sum, delay_n = 0.0, 0

    bus.send(MessageKind.MAP, "manager", MapDigest(mgr.map_digest), 0.0)

    for k in range(n_ticks):
        now = k * dt
        # lights
        if lights and k > 0:
            for lid in sorted(lights):
                lights[lid] = light_step(lights[lid], dt)
        if lights and k % every_spat == 0:
            for lid in sorted(lights):
                bus.send(MessageKind.SPAT, lid, spat_of(lights[lid]), now)
        # vehicle reports
        if k % every_bsm == 0:
            for c in cars:
                bus.send(MessageKind.BSM, c.state.car_id, perturb(c.state, noise, noise_rngs[c.state.car_id]), now)
        _dispatch(bus.deliver(now), mgr, cars, lights)
        # planning cycle
        if k % every_plan == 0:
            out = mgr.tick(now)
            for ev in out.events:
                events.append(ev)
                if ev["event"] == "route_completed":
                    m.completed_routes += 1
                    m.travel_times.append(ev["travel_time"])
                    cars[ev["car_id"]].routes += 1
                elif ev["event"] == "reroute":
                    m.reroutes += 1
            for req in out.preemptions:
                bus.send(MessageKind.PREEMPTION, "manager", req, now)
            for traj in out.commands:
                bus.send(MessageKind.TRAJECTORY_CMD, "manager", traj, now)
            _dispatch(bus.deliver(now), mgr, cars, lights)

        # ground truth bookkeeping at t_k
        xs = np.fromiter((c.state.x for c in cars), float, n)
        ys = np.fromiter((c.state.y for c in cars), float, n)
        if n > 1:
            dist = np.hypot(xs[iu] - xs[ju], ys[iu] - ys[ju])
            m.min_separation = min(m.min_separation, float(dist.min()))
            bad = dist < d_safe
            if bad.any():
                m.separation_violations += int(bad.sum())
                now_bad = {(int(iu[p]), int(ju[p])) for p in np.flatnonzero(bad)}
                for a, b in sorted(now_bad - violating):
                    events.append({"event": "separation_violation", "time": now, "car_a": a,
                                   "car_b": b, "distance": float(np.hypot(xs[a] - xs[b], ys[a] - ys[b]))})
                violating = now_bad
            else:
                violating = set()
        if (xs.min() < bx0 - 1 or xs.max() > bx1 + 1 or ys.min() < by0 - 1 or ys.max() > by1 + 1):
            raise InvariantError(f"a car left the map bounds at t={now:.2f}")

        all_still = True
        for c in cars:
            st = c.state
            speed_sum += st.v
            if st.v >= cfg.deadlock_speed:
                all_still = False
            rec = mgr.cars[st.car_id]
            path = rec.path
            if id(path) != c.path_id:
                c.path_id, c.hint = id(path), None
            p = _locate(path, st.x, st.y, c.hint)
            c.hint = p.s
            seg = path.segments[p.segment]
            acc = xte[seg.is_arc]
            acc[0] += abs(p.d)
            acc[1] += 1
            if trace is not None:
                note = c.cmd.note if c.cmd is not None else ""
                trace.append(
                    f"{now:.2f},{st.car_id},{st.x:.6f},{st.y:.6f},{st.heading:.6f},{st.v:.6f},"
                    f"{p.s:.6f},{p.d:.6f},{seg.id},{int(c.cmd is not None)},{note}\n")
        if all_still:
            if stall_since is None:
                stall_since = now
            elif not stall_flagged and now - stall_since > cfg.deadlock_time:
                stall_flagged = True
                m.deadlock_events += 1
                events.append({"event": "deadlock", "time": now, "since": stall_since})
        else:
            stall_since, stall_flagged = None, False

        # control and dynamics
        for c in cars:
            st = c.state
            if c.cmd is not None and not c.cmd_used:
                c.cmd_used = True
                delay_sum += now - c.cmd_created
                delay_n += 1
            if cfg.ideal and c.cmd is not None:
                x, y, h, v, _ = c.cmd.sample(now + dt)
                c.state = VehicleState(st.car_id, x, y, h, max(v, 0.0), 0.0, st.wheelbase, st.length, st.width)
                continue
            if c.cmd is None:
                u = Control(vp.a_min if st.v > 0 else 0.0, 0.0)
            else:
                u = pure_pursuit(st, c.cmd, vp.lookahead, vp, time=now)
            c.state = step(st, u, dt, vp.steer_max)

    samples = n * n_ticks
    m.throughput = m.completed_routes / (cfg.duration / 60.0)
    m.mean_speed = speed_sum / samples if samples else 0.0
    m.message_stats = bus.stats.as_dict()
    m.cross_track_error = {
        "straight_mean": xte[False][0] / xte[False][1] if xte[False][1] else 0.0,
        "curve_mean": xte[True][0] / xte[True][1] if xte[True][1] else 0.0,
    }
    m.mean_response_delay = delay_sum / delay_n if delay_n else 0.0
    m.routes_per_car = {c.state.car_id: c.routes for c in cars}
    m.unmanaged_ticks = mgr.unmanaged_ticks
    m.unresolved_conflicts = mgr.unresolved
    if m.min_separation == math.inf:
        m.min_separation = 0.0 if n < 2 else m.min_separation
    mgr.close()
    return RunResult(m, trace, events)


def _locate(path, x, y, hint):
    return project(path, x, y, hint)


def _dispatch(msgs, mgr: TrafficManager, cars: list, lights: dict) -> None:
    mgr.receive(msgs)
    for msg in msgs:
        if msg.kind is MessageKind.TRAJECTORY_CMD:
            c = cars[msg.payload.car_id]
            if msg.created > c.cmd_created:
                c.cmd, c.cmd_created, c.cmd_used = msg.payload, msg.created, False
        elif msg.kind is MessageKind.PREEMPTION:
            lid = msg.payload.light_id
            if lid in lights:
                lights[lid] = preempt(lights[lid], msg.payload.phase)


def lag_experiment(cfg: SimConfig, latencies) -> list[dict]:
    """One run per channel latency (same seed); reports response delay and separation."""
    rows = []
    for lat in latencies:
        if lat < 0:
            raise ConfigError(f"latency must be >= 0, got {lat}")
        c = cfg.model_copy(update={"channel": cfg.channel.model_copy(update={"base_latency": float(lat)}),
                                   "ideal": False})
        res = run(c)
        rows.append({"latency": float(lat),
                     "mean_response_delay": round(res.metrics.mean_response_delay, 9),
                     "min_separation": round(res.metrics.min_separation, 9)})
    return rows
