"""Directed road graph with fixed-spacing waypoints, routing and map files.

Conventions used everywhere in the package: right-hand traffic, headings in
radians measured counter-clockwise from +x, lateral offsets positive to the
left of the direction of travel.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Union

import numpy as np

from .errors import InvalidParameterError, MapValidationError, NoRouteError

TWO_PI = 2.0 * math.pi

DEFAULT_SPACING = 0.5
STRAIGHT_SPEED = 3.0
CURVE_SPEED = 2.0


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


class NodeKind(str, enum.Enum):
    LANE_POINT = "lane_point"
    INTERSECTION_ENTRY = "intersection_entry"
    INTERSECTION_EXIT = "intersection_exit"
    MERGE = "merge"
    DIVERGE = "diverge"


@dataclass(frozen=True)
class Node:
    id: str
    position: tuple[float, float]
    kind: NodeKind = NodeKind.LANE_POINT


@dataclass(frozen=True)
class Straight:
    def to_json(self) -> dict:
        return {"type": "straight"}


@dataclass(frozen=True)
class CircularArc:
    center: tuple[float, float]
    radius: float
    clockwise: bool

    def to_json(self) -> dict:
        return {
            "type": "arc",
            "center": [self.center[0], self.center[1]],
            "radius": self.radius,
            "clockwise": self.clockwise,
        }


Geometry = Union[Straight, CircularArc]


@dataclass(frozen=True)
class Waypoint:
    position: tuple[float, float]
    heading: float
    s_offset: float
    curvature: float


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    geometry: Geometry
    speed_limit: float
    length: float
    start: tuple[float, float]
    start_heading: float
    # arc only: polar angle of the start point and +1 (ccw) / -1 (cw)
    start_angle: float = 0.0
    turn: int = 0
    waypoints: tuple[Waypoint, ...] = field(default=(), repr=False)

    @property
    def is_arc(self) -> bool:
        return isinstance(self.geometry, CircularArc)

    @property
    def curvature(self) -> float:
        if self.is_arc:
            return self.turn / self.geometry.radius
        return 0.0

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Point and tangent heading at arclength ``s`` from the edge start."""
        if self.is_arc:
            g = self.geometry
            phi = self.start_angle + self.turn * s / g.radius
            return (
                g.center[0] + g.radius * math.cos(phi),
                g.center[1] + g.radius * math.sin(phi),
                wrap_angle(phi + self.turn * math.pi / 2.0),
            )
        c, sn = math.cos(self.start_heading), math.sin(self.start_heading)
        return self.start[0] + c * s, self.start[1] + sn * s, self.start_heading


def make_edge(
    edge_id: str,
    a: Node,
    b: Node,
    geometry: Geometry,
    speed_limit: float,
    spacing: float,
    tol: float = 1e-9,
) -> Edge:
    """Build an edge between two nodes and discretize its waypoints."""
    if not speed_limit > 0:
        raise MapValidationError(f"edge {edge_id}: speed_limit must be > 0", edge_id)
    (x0, y0), (x1, y1) = a.position, b.position
    if isinstance(geometry, CircularArc):
        if not geometry.radius > 0:
            raise MapValidationError(f"edge {edge_id}: arc radius must be > 0", edge_id)
        cx, cy = geometry.center
        for label, (px, py) in (("from", a.position), ("to", b.position)):
            r = math.hypot(px - cx, py - cy)
            if abs(r - geometry.radius) > tol:
                raise MapValidationError(
                    f"edge {edge_id}: {label} node lies {r:.9f} m from arc center, "
                    f"radius is {geometry.radius}",
                    edge_id,
                )
        turn = -1 if geometry.clockwise else 1
        a0 = math.atan2(y0 - cy, x0 - cx)
        a1 = math.atan2(y1 - cy, x1 - cx)
        sweep = (turn * (a1 - a0)) % TWO_PI
        if sweep < 1e-9:
            raise MapValidationError(f"edge {edge_id}: arc has zero sweep", edge_id)
        length = geometry.radius * sweep
        heading = wrap_angle(a0 + turn * math.pi / 2.0)
        edge = Edge(edge_id, a.id, b.id, geometry, speed_limit, length,
                    a.position, heading, a0, turn)
    else:
        length = math.hypot(x1 - x0, y1 - y0)
        if length <= 0:
            raise MapValidationError(f"edge {edge_id}: zero length", edge_id)
        heading = math.atan2(y1 - y0, x1 - x0)
        edge = Edge(edge_id, a.id, b.id, geometry, speed_limit, length, a.position, heading)

    offsets = waypoint_offsets(length, spacing)
    kappa = edge.curvature
    wps = []
    for s in offsets:
        x, y, h = edge.pose_at(s)
        wps.append(Waypoint((x, y), h, s, kappa))
    # pin the endpoints to the node positions exactly
    wps[0] = Waypoint(a.position, wps[0].heading, 0.0, kappa)
    wps[-1] = Waypoint(b.position, wps[-1].heading, length, kappa)
    object.__setattr__(edge, "waypoints", tuple(wps))
    return edge


def waypoint_offsets(length: float, spacing: float) -> list[float]:
    n = max(1, math.ceil(length / spacing - 1e-9))
    return [k * spacing for k in range(n)] + [length]


@dataclass(frozen=True, eq=False)
class RoadGraph:
    nodes: dict[str, Node]
    edges: dict[str, Edge]
    spacing: float

    @cached_property
    def adjacency(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges.values():
            out[e.from_node].append(e.id)
        return {n: tuple(sorted(v)) for n, v in out.items()}

    @cached_property
    def incoming(self) -> dict[str, tuple[str, ...]]:
        inc: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges.values():
            inc[e.to_node].append(e.id)
        return {n: tuple(sorted(v)) for n, v in inc.items()}

    def bounding_box(self) -> tuple[float, float, float, float]:
        pts = [w.position for e in self.edges.values() for w in e.waypoints]
        pts += [n.position for n in self.nodes.values()]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return min(xs), min(ys), max(xs), max(ys)

    def nodes_of_kind(self, *kinds: NodeKind) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind in kinds)

    def digest(self) -> str:
        return hashlib.sha256(dumps_map(self, waypoints=False).encode()).hexdigest()


def build_graph(nodes: Iterable[Node], edge_specs, spacing: float) -> RoadGraph:
    """Assemble a graph from nodes and ``(id, from, to, geometry, speed)`` tuples."""
    if not (isinstance(spacing, (int, float)) and math.isfinite(spacing) and spacing > 0):
        raise InvalidParameterError(f"spacing must be a positive finite number, got {spacing!r}")
    node_map: dict[str, Node] = {}
    for n in nodes:
        if n.id in node_map:
            raise MapValidationError(f"duplicate node id {n.id}", n.id)
        if not all(math.isfinite(c) for c in n.position):
            raise MapValidationError(f"node {n.id}: non-finite position", n.id)
        node_map[n.id] = n
    edges: dict[str, Edge] = {}
    for eid, a, b, geom, speed in edge_specs:
        if eid in edges:
            raise MapValidationError(f"duplicate edge id {eid}", eid)
        for end in (a, b):
            if end not in node_map:
                raise MapValidationError(f"edge {eid}: endpoint {end!r} is not a node", eid)
        edges[eid] = make_edge(eid, node_map[a], node_map[b], geom, speed, spacing)
    return RoadGraph(node_map, dict(sorted(edges.items())), float(spacing))


# ---------------------------------------------------------------------------
# default desk-scale map


def _unit(dx, dy):
    n = math.hypot(dx, dy)
    return dx / n, dy / n


def _rounded_polyline(points, radius):
    """Split an axis-aligned polyline into straight pieces and fillet arcs.

    Collinear interior vertices become piece boundaries (junction nodes);
    turning vertices are replaced by a tangent arc of ``radius``.
    Returns a list of ``(start, end, arc)`` with ``arc`` either None or
    ``(center, clockwise)``.
    """
    pieces = []
    cur = points[0]
    for i in range(1, len(points) - 1):
        a, b, c = points[i - 1], points[i], points[i + 1]
        ux, uy = _unit(b[0] - a[0], b[1] - a[1])
        vx, vy = _unit(c[0] - b[0], c[1] - b[1])
        cross = ux * vy - uy * vx
        if abs(cross) < 1e-12:
            pieces.append((cur, b, None))
            cur = b
            continue
        t0 = (b[0] - radius * ux, b[1] - radius * uy)
        t1 = (b[0] + radius * vx, b[1] + radius * vy)
        left = cross > 0
        nx, ny = (-uy, ux) if left else (uy, -ux)
        center = (t0[0] + radius * nx, t0[1] + radius * ny)
        if math.dist(cur, t0) > 1e-12:
            pieces.append((cur, t0, None))
        pieces.append((t0, t1, (center, not left)))
        cur = t1
    if math.dist(cur, points[-1]) > 1e-12:
        pieces.append((cur, points[-1], None))
    return pieces


# Intersection at (30, 25); lanes offset 1 m from the road centerlines.
_ENTRIES = {"in_w": (26.0, 24.0), "in_e": (34.0, 26.0), "in_n": (29.0, 29.0), "in_s": (31.0, 21.0)}
_EXITS = {"out_e": (34.0, 24.0), "out_w": (26.0, 26.0), "out_n": (31.0, 29.0), "out_s": (29.0, 21.0)}
# entry -> [(exit, arc center or None, clockwise)] for straight, right, left
_TURNS = {
    "in_w": [("out_e", None, False), ("out_s", (26.0, 21.0), True), ("out_n", (26.0, 29.0), False)],
    "in_e": [("out_w", None, False), ("out_n", (34.0, 29.0), True), ("out_s", (34.0, 21.0), False)],
    "in_n": [("out_s", None, False), ("out_w", (26.0, 29.0), True), ("out_e", (34.0, 29.0), False)],
    "in_s": [("out_n", None, False), ("out_e", (34.0, 21.0), True), ("out_w", (26.0, 21.0), False)],
}
# Each quadrant holds a clockwise loop from one exit back to the next entry,
# plus an inner shortcut that splits at a diverge node and rejoins at a merge.
_PETALS = {
    "ne": dict(exit="out_n", entry="in_e", div=(31.0, 32.0), mrg=(41.0, 26.0),
               outer=[(31.0, 46.0), (56.0, 46.0), (56.0, 26.0)],
               inner=[(31.0, 38.0), (44.0, 38.0), (44.0, 26.0), (34.0, 26.0)]),
    "se": dict(exit="out_e", entry="in_s", div=(37.0, 24.0), mrg=(31.0, 14.0),
               outer=[(56.0, 24.0), (56.0, 4.0), (31.0, 4.0)],
               inner=[(43.0, 24.0), (43.0, 11.0), (31.0, 11.0), (31.0, 21.0)]),
    "sw": dict(exit="out_s", entry="in_w", div=(29.0, 18.0), mrg=(19.0, 24.0),
               outer=[(29.0, 4.0), (4.0, 4.0), (4.0, 24.0)],
               inner=[(29.0, 12.0), (16.0, 12.0), (16.0, 24.0), (26.0, 24.0)]),
    "nw": dict(exit="out_w", entry="in_n", div=(23.0, 26.0), mrg=(29.0, 36.0),
               outer=[(4.0, 26.0), (4.0, 46.0), (29.0, 46.0)],
               inner=[(17.0, 26.0), (17.0, 39.0), (29.0, 39.0), (29.0, 29.0)]),
}


def build_default_map(spacing: float = DEFAULT_SPACING) -> RoadGraph:
    """Procedural 60 x 50 m map: one four-way intersection and four loops.

    Every approach offers straight, right and left turns. Each quadrant loop
    has a diverge node and a merge node, so the graph is strongly connected
    and routes never dead-end.
    """
    if not (isinstance(spacing, (int, float)) and math.isfinite(spacing) and spacing > 0):
        raise InvalidParameterError(f"spacing must be positive, got {spacing!r}")

    nodes: dict[tuple[float, float], Node] = {}

    def node(pos, name=None, kind=NodeKind.LANE_POINT):
        key = (round(pos[0], 9), round(pos[1], 9))
        if key not in nodes:
            nodes[key] = Node(name or f"n{len(nodes):03d}", (float(pos[0]), float(pos[1])), kind)
        return nodes[key].id

    for name, pos in _ENTRIES.items():
        node(pos, name, NodeKind.INTERSECTION_ENTRY)
    for name, pos in _EXITS.items():
        node(pos, name, NodeKind.INTERSECTION_EXIT)

    specs = []

    def add(a, b, arc):
        ida, idb = node(a), node(b)
        if arc is None:
            specs.append((ida, idb, Straight(), STRAIGHT_SPEED))
        else:
            center, cw = arc
            r = math.dist(center, a)
            specs.append((ida, idb, CircularArc(center, r, cw), CURVE_SPEED))

    for entry, turns in _TURNS.items():
        for exit_, center, cw in turns:
            arc = None if center is None else (center, cw)
            add(_ENTRIES[entry], _EXITS[exit_], arc)

    for name, p in _PETALS.items():
        node(p["div"], f"{name}_div", NodeKind.DIVERGE)
        node(p["mrg"], f"{name}_mrg", NodeKind.MERGE)
        outer = [_EXITS[p["exit"]], p["div"], *p["outer"], p["mrg"], _ENTRIES[p["entry"]]]
        for a, b, arc in _rounded_polyline(outer, 4.0):
            add(a, b, arc)
        inner = _rounded_polyline([p["div"], *p["inner"]], 3.0)
        # the last piece runs along the outer lane past the merge; drop it
        for a, b, arc in inner[:-1]:
            add(a, b, arc)

    node_list = sorted(nodes.values(), key=lambda n: n.id)
    edge_specs = [(f"e{i:03d}", a, b, g, v) for i, (a, b, g, v) in enumerate(specs)]
    graph = build_graph(node_list, edge_specs, spacing)
    shortest = min(e.length for e in graph.edges.values())
    if spacing > shortest:
        raise InvalidParameterError(
            f"spacing {spacing} exceeds the shortest edge length {shortest:.3f} m")
    return graph


# ---------------------------------------------------------------------------
# paths


class Path:
    """An ordered chain of edges with concatenated, re-based waypoints."""

    def __init__(self, graph: RoadGraph, edge_ids: Iterable[str], start_node: Optional[str] = None):
        self.edges: tuple[str, ...] = tuple(edge_ids)
        segs = []
        for i, eid in enumerate(self.edges):
            if eid not in graph.edges:
                raise InvalidParameterError(f"unknown edge {eid!r}")
            e = graph.edges[eid]
            if segs and segs[-1].to_node != e.from_node:
                raise InvalidParameterError(
                    f"edges {segs[-1].id} and {e.id} do not share a node")
            segs.append(e)
        self.segments: tuple[Edge, ...] = tuple(segs)
        starts = []
        total = 0.0
        for e in segs:
            starts.append(total)
            total += e.length
        self.edge_starts: tuple[float, ...] = tuple(starts)
        self.total_length: float = total
        if segs:
            self.node_sequence = [(segs[0].from_node, 0.0)] + [
                (e.to_node, s0 + e.length) for e, s0 in zip(segs, starts)]
        else:
            self.node_sequence = [(start_node, 0.0)] if start_node else []

    @cached_property
    def waypoints(self) -> tuple[Waypoint, ...]:
        out = []
        for k, (e, s0) in enumerate(zip(self.segments, self.edge_starts)):
            for j, w in enumerate(e.waypoints):
                if k > 0 and j == 0:
                    continue
                out.append(Waypoint(w.position, w.heading, s0 + w.s_offset, w.curvature))
        return tuple(out)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Per-segment geometry as numpy arrays for vectorized evaluation."""
        segs = self.segments
        arc = np.array([e.is_arc for e in segs], dtype=bool)
        return {
            "s0": np.array(self.edge_starts, dtype=float),
            "len": np.array([e.length for e in segs], dtype=float),
            "arc": arc,
            "x0": np.array([e.start[0] for e in segs], dtype=float),
            "y0": np.array([e.start[1] for e in segs], dtype=float),
            "h0": np.array([e.start_heading for e in segs], dtype=float),
            "cx": np.array([e.geometry.center[0] if e.is_arc else 0.0 for e in segs]),
            "cy": np.array([e.geometry.center[1] if e.is_arc else 0.0 for e in segs]),
            "r": np.array([e.geometry.radius if e.is_arc else 1.0 for e in segs]),
            "turn": np.array([e.turn for e in segs], dtype=float),
            "phi0": np.array([e.start_angle for e in segs], dtype=float),
            "vmax": np.array([e.speed_limit for e in segs], dtype=float),
        }

    def segment_index(self, s: float) -> int:
        """Index of the edge containing arclength ``s`` (last edge at the end)."""
        import bisect

        i = bisect.bisect_right(self.edge_starts, s) - 1
        return min(max(i, 0), len(self.segments) - 1)

    def node_s(self, node_id: str, after: float = -math.inf) -> Optional[float]:
        for nid, s in self.node_sequence:
            if nid == node_id and s >= after:
                return s
        return None

    def __len__(self):
        return len(self.edges)

    def __repr__(self):
        return f"Path({len(self.edges)} edges, {self.total_length:.3f} m)"


# ---------------------------------------------------------------------------
# routing


def reachable(graph: RoadGraph, start: str) -> set[str]:
    seen = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        for eid in graph.adjacency[n]:
            m = graph.edges[eid].to_node
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


def is_strongly_connected(graph: RoadGraph) -> bool:
    if not graph.nodes:
        return True
    first = next(iter(graph.nodes))
    if len(reachable(graph, first)) != len(graph.nodes):
        return False
    seen = {first}
    queue = deque([first])
    while queue:
        n = queue.popleft()
        for eid in graph.incoming[n]:
            m = graph.edges[eid].from_node
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return len(seen) == len(graph.nodes)


def a_star(graph: RoadGraph, start: str, goal: str) -> Path:
    """Minimum-arclength route from ``start`` to ``goal``.

    Straight-line distance is the heuristic. Equal-cost routes are broken by
    the lexicographically smaller edge-id sequence so results are repeatable.
    """
    for n in (start, goal):
        if n not in graph.nodes:
            raise InvalidParameterError(f"unknown node {n!r}")
    if start == goal:
        return Path(graph, (), start_node=start)

    gx, gy = graph.nodes[goal].position

    def h(node_id):
        x, y = graph.nodes[node_id].position
        # shaved slightly so float rounding cannot make it inadmissible
        return math.hypot(gx - x, gy - y) * (1.0 - 1e-12)

    best_g = {start: 0.0}
    heap = [(h(start), 0.0, (), start)]
    closed = set()
    while heap:
        f, g, seq, node = heapq.heappop(heap)
        if node in closed:
            continue
        if node == goal:
            return Path(graph, seq)
        closed.add(node)
        for eid in graph.adjacency[node]:
            e = graph.edges[eid]
            nxt = e.to_node
            if nxt in closed:
                continue
            ng = g + e.length
            if ng <= best_g.get(nxt, math.inf):
                best_g[nxt] = ng
                heapq.heappush(heap, (ng + h(nxt), ng, seq + (eid,), nxt))
    raise NoRouteError(f"no route from {start} to {goal}")


def random_goal(graph: RoadGraph, current: str, rng: np.random.Generator) -> str:
    """Draw a goal node, other than ``current``, that is reachable from it."""
    if len(graph.nodes) < 2:
        raise InvalidParameterError("graph needs at least two nodes")
    if current not in graph.nodes:
        raise InvalidParameterError(f"unknown node {current!r}")
    candidates = sorted(reachable(graph, current) - {current})
    if not candidates:
        raise NoRouteError(f"no node reachable from {current}")
    return candidates[int(rng.integers(len(candidates)))]


# ---------------------------------------------------------------------------
# map files


def map_to_dict(graph: RoadGraph, waypoints: bool = True) -> dict:
    doc = {
        "spacing_m": graph.spacing,
        "nodes": [
            {"id": n.id, "x": n.position[0], "y": n.position[1], "kind": n.kind.value}
            for n in graph.nodes.values()
        ],
        "edges": [],
    }
    for e in graph.edges.values():
        item = {
            "id": e.id,
            "from": e.from_node,
            "to": e.to_node,
            "geometry": e.geometry.to_json(),
            "speed_limit": e.speed_limit,
        }
        if waypoints:
            item["waypoints"] = [
                [w.position[0], w.position[1], w.heading, w.s_offset, w.curvature]
                for w in e.waypoints
            ]
        doc["edges"].append(item)
    return doc


def dumps_map(graph: RoadGraph, waypoints: bool = True) -> str:
    return json.dumps(map_to_dict(graph, waypoints), indent=1)


def _num(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise MapValidationError(f"{where}: expected a finite number, got {value!r}", where)
    if positive and value <= 0:
        raise MapValidationError(f"{where}: must be > 0, got {value!r}", where)
    return float(value)


def _keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise MapValidationError(f"{where}: expected an object", where)
    missing = [k for k in required if k not in obj]
    if missing:
        raise MapValidationError(f"{where}: missing field {missing[0]!r}", where)
    extra = sorted(set(obj) - set(required) - set(optional))
    if extra:
        raise MapValidationError(f"{where}: unknown field {extra[0]!r}", where)


def map_from_dict(doc) -> RoadGraph:
    """Parse and validate a map document; raises on the first violation."""
    _keys(doc, ("nodes", "edges", "spacing_m"), (), "map")
    spacing = _num(doc["spacing_m"], "spacing_m", positive=True)
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise MapValidationError("map: 'nodes' and 'edges' must be lists", "map")
    kinds = {k.value for k in NodeKind}
    nodes = []
    seen = set()
    for i, item in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        _keys(item, ("id", "x", "y"), ("kind",), where)
        nid = item["id"]
        if not isinstance(nid, str) or not nid:
            raise MapValidationError(f"{where}: id must be a non-empty string", where)
        if nid in seen:
            raise MapValidationError(f"{where}: duplicate node id {nid!r}", nid)
        seen.add(nid)
        kind = item.get("kind", "lane_point")
        if kind not in kinds:
            raise MapValidationError(f"{where} (node {nid}): unknown kind {kind!r}", nid)
        x = _num(item["x"], f"{where}.x")
        y = _num(item["y"], f"{where}.y")
        nodes.append(Node(nid, (x, y), NodeKind(kind)))

    specs = []
    given_wps = {}
    for i, item in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        _keys(item, ("id", "from", "to", "geometry", "speed_limit"), ("waypoints",), where)
        eid = item["id"]
        if not isinstance(eid, str) or not eid:
            raise MapValidationError(f"{where}: id must be a non-empty string", where)
        for end in ("from", "to"):
            if item[end] not in seen:
                raise MapValidationError(
                    f"edge {eid}: {end} node {item[end]!r} does not exist (dangling endpoint)", eid)
        geo = item["geometry"]
        if not isinstance(geo, dict) or geo.get("type") not in ("straight", "arc"):
            raise MapValidationError(f"edge {eid}: geometry.type must be 'straight' or 'arc'", eid)
        if geo["type"] == "straight":
            _keys(geo, ("type",), (), f"edge {eid}.geometry")
            geometry: Geometry = Straight()
        else:
            _keys(geo, ("type", "center", "radius", "clockwise"), (), f"edge {eid}.geometry")
            c = geo["center"]
            if not isinstance(c, list) or len(c) != 2:
                raise MapValidationError(f"edge {eid}: geometry.center must be [x, y]", eid)
            if not isinstance(geo["clockwise"], bool):
                raise MapValidationError(f"edge {eid}: geometry.clockwise must be a boolean", eid)
            geometry = CircularArc(
                (_num(c[0], f"edge {eid}.center"), _num(c[1], f"edge {eid}.center")),
                _num(geo["radius"], f"edge {eid}.radius", positive=True),
                geo["clockwise"],
            )
        speed = _num(item["speed_limit"], f"edge {eid}.speed_limit", positive=True)
        specs.append((eid, item["from"], item["to"], geometry, speed))
        if "waypoints" in item:
            given_wps[eid] = item["waypoints"]

    graph = build_graph(nodes, specs, spacing)
    for eid, wps in given_wps.items():
        _check_waypoints(graph.edges[eid], wps, spacing)
    return graph


def _check_waypoints(edge: Edge, wps, spacing: float) -> None:
    eid = edge.id
    if not isinstance(wps, list) or len(wps) < 2:
        raise MapValidationError(f"edge {eid}: waypoints must be a list of >= 2 entries", eid)
    prev_s = None
    for k, w in enumerate(wps):
        if not isinstance(w, list) or len(w) != 5:
            raise MapValidationError(
                f"edge {eid}: waypoint {k} must be [x, y, heading, s, curvature]", eid)
        x, y, h, s, _ = (_num(v, f"edge {eid}.waypoints[{k}]") for v in w)
        if prev_s is not None:
            gap = s - prev_s
            last = k == len(wps) - 1
            if gap <= 0:
                raise MapValidationError(
                    f"edge {eid}: waypoint {k} s_offset not increasing (gap {gap:.6f} m)", eid)
            if (not last and abs(gap - spacing) > 1e-6) or (last and gap > spacing + 1e-6):
                raise MapValidationError(
                    f"edge {eid}: waypoint spacing {gap:.6f} m at index {k}, "
                    f"expected {spacing} m", eid)
        prev_s = s
        ex, ey, eh = edge.pose_at(s)
        off = math.hypot(x - ex, y - ey)
        if off > 1e-9:
            raise MapValidationError(
                f"edge {eid}: waypoint {k} lies {off:.6g} m off the edge geometry", eid)
        if abs(wrap_angle(h - eh)) > 1e-9:
            raise MapValidationError(f"edge {eid}: waypoint {k} heading not tangent", eid)
    if abs(prev_s - edge.length) > 1e-6:
        raise MapValidationError(
            f"edge {eid}: last waypoint at s={prev_s:.6f}, edge length {edge.length:.6f}", eid)


def loads_map(text: str) -> RoadGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapValidationError(f"line {exc.lineno}: malformed JSON ({exc.msg})", "document")
    return map_from_dict(doc)


def load_map(path) -> RoadGraph:
    with open(path, encoding="utf-8") as fh:
        return loads_map(fh.read())


def save_map(graph: RoadGraph, path, waypoints: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_map(graph, waypoints))
        fh.write("\n")
