import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from fleettwin.frenet import FrenetState
from fleettwin.planner import (
    Obstacle, ObstacleKind, PlannerParams, SegmentClass, acc_target, classify_segment, plan,
    quintic_eval, quintic_solve, speed_cap,
)
from fleettwin.roadgraph import NodeKind, Path, a_star

from helpers import line_graph, line_path, loop_path

finite = st.floats(-20.0, 20.0, allow_nan=False)


def residuals(c, s0, v0, a0, s1, v1, a1, T):
    return [
        quintic_eval(c, 0.0) - s0, quintic_eval(c, 0.0, 1) - v0, quintic_eval(c, 0.0, 2) - a0,
        quintic_eval(c, T) - s1, quintic_eval(c, T, 1) - v1, quintic_eval(c, T, 2) - a1,
    ]


def test_quintic_zero():
    assert np.all(quintic_solve(0, 0, 0, 0, 0, 0, 2.0) == 0.0)


def test_quintic_constant_velocity():
    T = 3.0
    c = quintic_solve(0.0, 1.0, 0.0, T, 1.0, 0.0, T)
    assert np.allclose(c, [0, 1, 0, 0, 0, 0], atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(s0=finite, v0=finite, a0=finite, s1=finite, v1=finite, a1=finite, T=st.floats(1.0, 5.0))
def test_quintic_boundary_residuals(s0, v0, a0, s1, v1, a1, T):
    c = quintic_solve(s0, v0, a0, s1, v1, a1, T)
    assert max(abs(float(r)) for r in residuals(c, s0, v0, a0, s1, v1, a1, T)) < 1e-9


def test_quintic_rejects_nonpositive_duration():
    with pytest.raises(ValueError):
        quintic_solve(0, 0, 0, 1, 0, 0, 0.0)


def test_acc_steady_cruise():
    p = PlannerParams()
    tgt = acc_target(FrenetState(0.0, 0.0, 3.0), None, p, 3.0)
    assert tgt.v1 == 3.0 and tgt.a1 == 0.0


def test_acc_stop_behind_stopped_leader():
    p = PlannerParams(standstill_gap=1.0)
    tgt = acc_target(FrenetState(0.0, 0.0, 1.0), FrenetState(2.0, 0.0, 0.0), p, 3.0)
    assert tgt.s1 == pytest.approx(1.0)
    assert tgt.v1 == 0.0


def test_constant_speed_leader_terminal_gap():
    p = PlannerParams(standstill_gap=1.0, time_headway=1.0)
    lead = FrenetState(5.0, 0.0, 2.0)
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, 2.0), p, leader=lead)
    gap = lead.s + lead.s_dot * p.horizon - traj.s[-1]
    assert gap == pytest.approx(1.0 + 2.0 * 1.0, abs=0.05)


def test_plan_straight_cruise():
    p = PlannerParams()
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, 3.0), p)
    assert np.all(traj.d == 0.0)
    assert np.allclose(traj.v, 3.0)
    assert len(traj) == p.n_frames


def test_plan_lateral_convergence():
    p = PlannerParams()
    traj = plan(line_path(60.0), FrenetState(0.0, 0.3, 3.0), p)
    assert abs(traj.d[-1]) < 1e-3
    absd = np.abs(traj.d)
    # the quintic approaches from one side; once near zero it stays there
    first = int(np.argmax(absd < 1e-12))
    assert np.all(np.diff(absd[first:]) <= 1e-15)
    assert np.all(np.diff(absd) <= 1e-15)


@pytest.mark.parametrize("v0", [2.0, 3.0])
def test_plan_stops_before_construction_zone(v0):
    p = PlannerParams(standstill_gap=1.0)
    ob = Obstacle((10.0, 0.0), 0.5, ObstacleKind.CONSTRUCTION_ZONE)
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, v0), p, obstacles=[ob])
    assert traj.s.max() <= 9.0 + 1e-6
    assert traj.v[-1] == 0.0


def test_obstacle_beside_lane_ignored():
    p = PlannerParams(standstill_gap=1.0)
    ob = Obstacle((10.0, 3.0), 0.5)
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, 3.0), p, obstacles=[ob])
    assert np.allclose(traj.v, 3.0)


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.0, 40.0), v=st.floats(0.0, 3.0), stop=st.floats(0.5, 30.0))
def test_plan_never_passes_stop(s, v, stop):
    p = PlannerParams()
    stop_s = s + stop
    traj = plan(loop_path(2), FrenetState(s, 0.0, v), p, stops=[stop_s])
    # the stop holds whenever braking at a_min can still make it
    if stop >= v * v / (2 * -p.a_min) + 0.05:
        assert traj.s.max() <= stop_s + 1e-9
    assert np.all(traj.v >= 0.0)
    assert np.all(np.diff(traj.s) >= -1e-12)
    acc = np.diff(traj.v) / p.dt
    assert acc.min() >= p.a_min - 1e-9 and acc.max() <= p.a_max + 1e-9
    # frame-to-frame displacement agrees with the sampled speed
    slip = np.abs(np.diff(traj.s) / p.dt - traj.v[:-1])
    assert slip.max() <= p.a_max * p.dt + 1e-6
    assert slip.max() <= 0.5 * max(p.a_max, -p.a_min) * p.dt + 1e-6


def test_unreachable_stop_brakes_at_full_rate():
    p = PlannerParams()
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, 3.0), p, stops=[1.0])
    assert traj.a[0] == pytest.approx(p.a_min)
    assert traj.v[-1] == 0.0
    assert traj.s.max() <= 3.0 ** 2 / (2 * -p.a_min) + 0.5 * -p.a_min * p.dt ** 2


@settings(max_examples=200, deadline=None)
@given(s=st.floats(0.0, 10.0), v=st.floats(0.0, 3.0), room=st.floats(0.0, 20.0), vl=st.floats(0.0, 3.0))
def test_plan_stays_behind_leader(s, v, room, vl):
    p = PlannerParams()
    # only states that can still brake to the leader's speed in time
    assume(room >= max(v - vl, 0.0) ** 2 / (2 * -p.a_min) + 0.05)
    lead = FrenetState(s + p.standstill_gap + room, 0.0, vl)
    traj = plan(line_path(80.0), FrenetState(s, 0.0, v), p, leader=lead)
    assert np.all(traj.s < lead.s + vl * traj.t - p.standstill_gap + 1e-6)


def test_plan_respects_curve_limits():
    p = PlannerParams()
    path = loop_path(2)
    traj = plan(path, FrenetState(0.0, 0.0, 3.0), p)
    for s, v in zip(traj.s, traj.v):
        assert v <= speed_cap(path, s, p.curve_decel) + 0.05 * 2 * p.curve_decel + 1e-9


def test_classify_far_from_junctions(default_map):
    path = Path(default_map, ["e000"])
    edge = default_map.edges["e000"]
    # internal turn edge of the intersection
    assert default_map.nodes[edge.from_node].kind is NodeKind.INTERSECTION_ENTRY
    assert classify_segment(path, 0.5 * edge.length, default_map) is SegmentClass.IN_INTERSECTION
    straight = line_path(60.0)
    assert classify_segment(straight, 10.0, line_graph(60.0)) is SegmentClass.NORMAL


def test_classify_before_merge(default_map):
    merge = default_map.nodes_of_kind(NodeKind.MERGE)[0]
    inc = default_map.incoming[merge][0]
    start = default_map.edges[inc].from_node
    path = a_star(default_map, start, merge)
    s_merge = path.total_length
    assert s_merge > 5.0
    assert classify_segment(path, s_merge - 5.0, default_map, 8.0) is SegmentClass.APPROACHING_MERGE


def test_classify_sweep_changes_at_lookahead(default_map):
    path = a_star(default_map, "out_e", "in_e")
    L = 8.0
    kinds = default_map.nodes
    for s in np.arange(0.0, path.total_length, 0.05):
        seg = path.segments[path.segment_index(s)]
        inside = (kinds[seg.from_node].kind is NodeKind.INTERSECTION_ENTRY
                  and kinds[seg.to_node].kind is NodeKind.INTERSECTION_EXIT)
        ahead = {kinds[n].kind for n, ns in path.node_sequence if s < ns <= s + L}
        if inside or NodeKind.INTERSECTION_ENTRY in ahead:
            want = SegmentClass.IN_INTERSECTION
        elif NodeKind.MERGE in ahead:
            want = SegmentClass.APPROACHING_MERGE
        elif NodeKind.DIVERGE in ahead:
            want = SegmentClass.APPROACHING_DIVERGE
        else:
            want = SegmentClass.NORMAL
        assert classify_segment(path, float(s), default_map, L) is want


def test_sample_interpolates():
    p = PlannerParams()
    traj = plan(line_path(60.0), FrenetState(0.0, 0.0, 3.0), p, start_time=10.0)
    x, y, h, v, s = traj.sample(10.05)
    assert x == pytest.approx(0.15)
    assert v == pytest.approx(3.0)
    assert traj.sample(0.0)[0] == pytest.approx(0.0)
    assert traj.sample(1e6)[0] == pytest.approx(traj.x[-1])
    assert math.isfinite(h) and s == pytest.approx(0.15)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(0.0, 3.0), a=st.floats(-2.0, 2.0), d=st.floats(-0.8, 0.8), dd=st.floats(-0.5, 0.5))
def test_planned_quintics_meet_boundary_conditions(v, a, d, dd):
    p = PlannerParams()
    fs = FrenetState(5.0, d, v, dd, a)
    traj = plan(loop_path(2), fs, p)
    c, T = traj.d_coeffs, traj.d_duration
    start = (quintic_eval(c, 0.0) - d, quintic_eval(c, 0.0, 1) - dd, quintic_eval(c, 0.0, 2))
    end = (quintic_eval(c, T), quintic_eval(c, T, 1), quintic_eval(c, T, 2))
    assert max(abs(float(r)) for r in start + end) < 1e-9
    if traj.s_coeffs is not None:
        c = traj.s_coeffs
        res = (quintic_eval(c, 0.0) - fs.s, quintic_eval(c, 0.0, 1) - v, quintic_eval(c, 0.0, 2) - a)
        assert max(abs(float(r)) for r in res) < 1e-9
