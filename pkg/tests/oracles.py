"""Independent reference implementations used as test oracles.

These deliberately avoid the package's own search and geometry helpers so a
shared bug cannot hide on both sides of a comparison.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from fleettwin.planner import Trajectory
from fleettwin.roadgraph import Node, Straight, build_graph


def dijkstra(graph, start, goal) -> float:
    """Plain Dijkstra over ``graph.edges`` (no heuristic, no adjacency cache)."""
    out = {}
    for e in graph.edges.values():
        out.setdefault(e.from_node, []).append((e.length, e.to_node))
    dist = {start: 0.0}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == goal:
            return d
        done.add(u)
        for w, v in out.get(u, ()):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return math.inf


def random_strong_graph(rng: np.random.Generator, n: int, extra: int | None = None, spacing=1.0):
    """Random strongly connected graph of straight edges.

    A random Hamiltonian cycle guarantees strong connectivity; extra random
    chords create alternative routes.
    """
    pts = set()
    while len(pts) < n:
        pts.add((int(rng.integers(0, 60)), int(rng.integers(0, 60))))
    pts = sorted(pts)
    order = rng.permutation(n)
    nodes = [Node(f"v{i}", (float(pts[i][0]), float(pts[i][1]))) for i in range(n)]
    pairs = set()
    for k in range(n):
        pairs.add((int(order[k]), int(order[(k + 1) % n])))
    extra = n if extra is None else extra
    for _ in range(extra):
        a, b = (int(v) for v in rng.integers(0, n, 2))
        if a != b:
            pairs.add((a, b))
    specs = [(f"x{i}", f"v{a}", f"v{b}", Straight(), 1.0) for i, (a, b) in enumerate(sorted(pairs))]
    return build_graph(nodes, specs, spacing)


def dense_projection(path, x, y, step=1e-3):
    """Nearest point by brute force over a ``step``-resampled path: (s, signed d)."""
    best = (math.inf, 0.0, 0.0)
    for e, s0 in zip(path.segments, path.edge_starts):
        s = np.arange(0.0, e.length + step / 2, step)
        s[-1] = min(s[-1], e.length)
        if e.is_arc:
            g = e.geometry
            phi = e.start_angle + e.turn * s / g.radius
            px = g.center[0] + g.radius * np.cos(phi)
            py = g.center[1] + g.radius * np.sin(phi)
            h = phi + e.turn * math.pi / 2
        else:
            px = e.start[0] + math.cos(e.start_heading) * s
            py = e.start[1] + math.sin(e.start_heading) * s
            h = np.full_like(s, e.start_heading)
        dist = np.hypot(x - px, y - py)
        k = int(np.argmin(dist))
        if dist[k] < best[0]:
            # sign from the left normal
            side = -math.sin(h[k]) * (x - px[k]) + math.cos(h[k]) * (y - py[k])
            best = (float(dist[k]), s0 + float(s[k]), math.copysign(float(dist[k]), side))
    return best[1], best[2]


def make_traj(car_id, x, y, start_time=0.0, dt=0.1) -> Trajectory:
    """Bare trajectory from positions only (no path)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    zeros = np.zeros(n)
    return Trajectory(car_id, start_time, dt, np.arange(n) * dt, zeros.copy(), zeros.copy(),
                      x, y, zeros.copy(), zeros.copy(), zeros.copy())


def random_trajectory_set(rng, n_cars, n_frames):
    """Random-walk trajectories with staggered starts on the 0.1 s grid."""
    trajs = []
    for cid in range(n_cars):
        n = int(rng.integers(2, n_frames + 1))
        start = int(rng.integers(0, 20)) * 0.1
        x = np.cumsum(rng.normal(0, 0.5, n)) + rng.uniform(0, 8)
        y = np.cumsum(rng.normal(0, 0.5, n)) + rng.uniform(0, 8)
        trajs.append(make_traj(cid, x, y, start_time=start))
    return trajs


def exhaustive_conflicts(trajs, threshold):
    """First co-timestamp below ``threshold`` for every pair, by nested loops.

    Returns ``{(a, b): (frame_index, distance, time)}`` with ``a < b`` and the
    frame index counted from the first common timestamp.
    """
    out = {}
    by_id = sorted(trajs, key=lambda t: t.car_id)
    for i in range(len(by_id)):
        for j in range(i + 1, len(by_id)):
            a, b = by_id[i], by_id[j]
            ta = {round(a.start_time / a.dt) + k: k for k in range(len(a.x))}
            tb = {round(b.start_time / b.dt) + k: k for k in range(len(b.x))}
            common = sorted(set(ta) & set(tb))
            for idx, tick in enumerate(common):
                ka, kb = ta[tick], tb[tick]
                d = math.hypot(a.x[ka] - b.x[kb], a.y[ka] - b.y[kb])
                if d < threshold:
                    out[(a.car_id, b.car_id)] = (idx, d, tick * a.dt)
                    break
    return out


def scan_min_separation(trajs) -> float:
    """Smallest co-timestamp center distance over all pairs, by nested loops."""
    best = math.inf
    for i in range(len(trajs)):
        for j in range(i + 1, len(trajs)):
            a, b = trajs[i], trajs[j]
            ta = {round(a.start_time / a.dt) + k: k for k in range(len(a.x))}
            tb = {round(b.start_time / b.dt) + k: k for k in range(len(b.x))}
            for tick in set(ta) & set(tb):
                ka, kb = ta[tick], tb[tick]
                best = min(best, math.hypot(a.x[ka] - b.x[kb], a.y[ka] - b.y[kb]))
    return best
