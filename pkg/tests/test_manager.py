import numpy as np
import pytest

from fleettwin.conflict import SeparationParams
from fleettwin.manager import ManagerMode, TrafficManager
from fleettwin.planner import PlannerParams
from fleettwin.v2x import LightState, MessageKind, SPaT, V2XMessage
from fleettwin.vehicle import VehicleState

from helpers import loop_graph

P = PlannerParams()
LINE_S = 14.0  # s0 runs from (3, 0) to (17, 0), ending at node p1


def manager(**kw):
    return TrafficManager(loop_graph(), P, SeparationParams(), **kw)


def bsm(car_id, x, v, t, msg_id=0):
    return V2XMessage(msg_id, MessageKind.BSM, car_id, VehicleState(car_id, x, 0.0, 0.0, v), t)


def spat(state, t, msg_id=100):
    return V2XMessage(msg_id, MessageKind.SPAT, "L", SPaT("L", state, 5.0), t)


def test_car_at_goal_completes_route():
    mgr = manager()
    # p3 is the far end of s1, the east straight from (20, 3) to (20, 7)
    mgr.add_car(0, np.random.default_rng(0), "s0", goals=["p3"])
    st = VehicleState(0, 20.0, 6.5, np.pi / 2, 1.0)
    mgr.receive([V2XMessage(0, MessageKind.BSM, 0, st, 0.0)])
    out = mgr.tick(0.0)
    done = [e for e in out.events if e["event"] == "route_completed"]
    assert len(done) == 1 and done[0]["goal"] == "p3" and done[0]["car_id"] == 0
    assert len(out.commands) == 1
    # the finished goal is gone and a new one lies ahead
    rec = mgr.cars[0]
    assert rec.goals and rec.goals[0][0] != "p3"
    assert rec.path.total_length - rec.fs.s >= mgr.MIN_AHEAD


def test_no_report_means_no_command():
    mgr = manager()
    mgr.add_car(0, np.random.default_rng(0), "s0")
    out = mgr.tick(0.0)
    assert out.commands == [] and mgr.unmanaged_ticks == 1


def test_red_light_stop_then_go():
    mgr = manager(light_nodes={"L": ["p1"]})
    mgr.add_car(0, np.random.default_rng(0), "s0")
    x = 3.0 + LINE_S - 5.0
    mgr.receive([bsm(0, x, 1.0, 0.0), spat(LightState.RED, 0.0)])
    (traj,) = mgr.tick(0.0).commands
    assert traj.s.max() <= LINE_S - P.standstill_gap + 1e-6
    assert traj.v[-1] == 0.0
    mgr.receive([bsm(0, x, 1.0, 0.2, 1), spat(LightState.GREEN, 0.2, 101)])
    (traj,) = mgr.tick(0.2).commands
    assert traj.s.max() > LINE_S


def test_emergency_car_requests_preemption():
    mgr = manager(light_nodes={"L": ["p1"]}, light_greens={"L": 0})
    mgr.add_car(0, np.random.default_rng(0), "s0", emergency=True)
    mgr.receive([bsm(0, 3.0 + LINE_S - 5.0, 1.0, 0.0), spat(LightState.RED, 0.0)])
    out = mgr.tick(0.0)
    assert [(r.light_id, r.phase) for r in out.preemptions] == [("L", 0)]
    (traj,) = out.commands
    assert traj.s.max() > LINE_S
    # the request is sent once per light
    assert mgr.tick(0.2).preemptions == []


def test_stale_report_ignored():
    mgr = manager()
    mgr.add_car(0, np.random.default_rng(0), "s0")
    mgr.receive([bsm(0, 8.0, 1.0, 1.0)])
    mgr.receive([bsm(0, 5.0, 1.0, 0.5, 1)])
    assert mgr.cars[0].state.x == 8.0


def test_off_path_report_reroutes(default_map):
    g = default_map
    mgr = TrafficManager(g, P, SeparationParams(), corridor=1.0)
    rec = mgr.add_car(0, np.random.default_rng(0), "e050")
    goal = rec.goals[0][0]
    # the car reports from the eastern approach, away from its route
    x, y, h = g.edges["e020"].pose_at(1.0)
    mgr.receive([V2XMessage(0, MessageKind.BSM, 0, VehicleState(0, x, y, h, 1.0), 0.0)])
    out = mgr.tick(0.0)
    assert any(e["event"] == "reroute" for e in out.events)
    assert rec.path.edges[0] == "e020"
    assert rec.goals[0][0] == goal
    assert len(out.commands) == 1


def test_follower_keeps_gap_behind_leader():
    mgr = manager()
    for cid in (0, 1):
        mgr.add_car(cid, np.random.default_rng(cid), "s0")
    mgr.receive([bsm(0, 10.0, 0.0, 0.0), bsm(1, 4.0, 2.0, 0.0, 1)])
    out = mgr.tick(0.0)
    follower = next(t for t in out.commands if t.car_id == 1)
    assert follower.s.max() <= (10.0 - 3.0) - P.standstill_gap + 1e-6


@pytest.mark.parametrize("mode", list(ManagerMode))
def test_commands_are_conflict_free_when_spaced(mode):
    mgr = manager(mode=mode)
    for cid, x in enumerate((4.0, 12.0)):
        mgr.add_car(cid, np.random.default_rng(cid), "s0")
        mgr.receive([bsm(cid, x, 2.0, 0.0, cid)])
    out = mgr.tick(0.0)
    assert sorted(t.car_id for t in out.commands) == [0, 1]
    assert mgr.buffer_conflicts() == []


def four_way_manager(g, mode):
    mgr = TrafficManager(g, P, SeparationParams(margin=0.5, relax_initial=True), mode=mode)
    msgs = []
    for cid, entry in enumerate(("in_w", "in_n", "in_e", "in_s")):
        inc = g.incoming[entry][0]
        mgr.add_car(cid, np.random.default_rng(cid), inc)
        x, y, h = g.edges[inc].pose_at(g.edges[inc].length - 4.0 - cid)
        msgs.append(V2XMessage(cid, MessageKind.BSM, cid, VehicleState(cid, x, y, h, 2.0), 0.0))
    mgr.receive(msgs)
    return mgr


def test_emitted_buffers_conflict_free(default_map):
    mgr = four_way_manager(default_map, ManagerMode.OPTIMIZED)
    out = mgr.tick(0.0)
    assert len(out.commands) == 4
    # the nominal plans collide, so at least one car was slowed
    assert any(t.note for t in out.commands)
    assert mgr.unresolved == 0
    assert mgr.buffer_conflicts() == []


def test_modes_draw_the_same_routes(default_map):
    a = four_way_manager(default_map, ManagerMode.OPTIMIZED)
    b = four_way_manager(default_map, ManagerMode.FIFO)
    for cid in a.cars:
        assert a.cars[cid].path.edges == b.cars[cid].path.edges
        assert a.cars[cid].goals == b.cars[cid].goals
