import numpy as np
import pytest

from ihid.evalbench.world import PRESETS, WorldSpec, synth_world
from ihid.graph import build_graph, nearest_node
from ihid.trajectory import segment_by_graph, to_plane


def test_zero_noise_on_route():
    spec = PRESETS["y"](noise=0.0, node_jitter=0.0, n_trajectories=20)
    _, trajs, route_of = synth_world(spec)
    for tr in trajs:
        path = spec.routes[route_of[tr.id]][0]
        verts = np.array([spec.node_latlon(n) for n in path])
        pv = to_plane(verts, 30.66)
        pts = to_plane(tr.coords, 30.66)
        dev = []
        for p in pts:
            best = np.inf
            for a, b in zip(pv[:-1], pv[1:]):
                ab = b - a
                u = np.clip((p - a) @ ab / (ab @ ab), 0, 1)
                best = min(best, np.hypot(*(a + u * ab - p)))
            dev.append(best)
        assert max(dev) < 1e-12


def test_invalid_route_reference():
    with pytest.raises(ValueError):
        WorldSpec({0: (0, 0), 1: (1, 0)}, {0: "destination", 1: "destination"}, [((0, 5), 1.0)])


def test_deterministic():
    spec = PRESETS["y"](n_trajectories=10)
    a = synth_world(spec)[1]
    b = synth_world(spec)[1]
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))


@pytest.mark.parametrize("name", ["y", "nine_node", "default"])
def test_graph_recovery(name):
    spec = PRESETS[name]()
    gt, trajs, _ = synth_world(spec)
    g = build_graph(trajs, bbox=gt.bbox)
    m = {n.id: nearest_node(gt, n.center) for n in g.nodes}
    used = {n for path, _ in spec.routes for n in path}
    assert sorted(v for v in m.values() if v is not None) == sorted(used)
    assert {(m[u], m[v]) for u, v in g.edges} == set(gt.edges)


def test_nine_node_segmentation_matches_route(nine_node_world):
    spec, gt, trajs, route_of = nine_node_world
    for tr in trajs:
        seq = segment_by_graph(tr, gt, gt.bbox, 4).subgoal_seq
        assert tuple(seq) == spec.routes[route_of[tr.id]][0]
