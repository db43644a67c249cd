"""Small hand-built maps shared by the tests."""

from fleettwin.roadgraph import CircularArc, Node, Path, Straight, build_graph


def line_graph(length=50.0, speed=3.0, spacing=0.5):
    """One straight edge along +x from the origin."""
    nodes = [Node("A", (0.0, 0.0)), Node("B", (length, 0.0))]
    return build_graph(nodes, [("ab", "A", "B", Straight(), speed)], spacing)


def loop_graph(spacing=0.5):
    """Rounded rectangle: four straights joined by quarter arcs of radius 3 (ccw)."""
    r = 3.0
    pts = {
        "p0": (r, 0.0), "p1": (20.0 - r, 0.0), "p2": (20.0, r), "p3": (20.0, 10.0 - r),
        "p4": (20.0 - r, 10.0), "p5": (r, 10.0), "p6": (0.0, 10.0 - r), "p7": (0.0, r),
    }
    nodes = [Node(k, v) for k, v in pts.items()]
    specs = [
        ("s0", "p0", "p1", Straight(), 3.0),
        ("a0", "p1", "p2", CircularArc((20.0 - r, r), r, False), 1.5),
        ("s1", "p2", "p3", Straight(), 3.0),
        ("a1", "p3", "p4", CircularArc((20.0 - r, 10.0 - r), r, False), 1.5),
        ("s2", "p4", "p5", Straight(), 3.0),
        ("a2", "p5", "p6", CircularArc((r, 10.0 - r), r, False), 1.5),
        ("s3", "p6", "p7", Straight(), 3.0),
        ("a3", "p7", "p0", CircularArc((r, r), r, False), 1.5),
    ]
    return build_graph(nodes, specs, spacing)


def line_path(length=50.0, speed=3.0):
    return Path(line_graph(length, speed), ["ab"])


def loop_path(laps=1):
    g = loop_graph()
    return Path(g, ["s0", "a0", "s1", "a1", "s2", "a2", "s3", "a3"] * laps)
