"""Synthetic goal-directed trajectory worlds.

Agents pick a route (a node path), then walk each leg along the straight
segment between node positions bent by a smooth lateral wiggle that vanishes
at both nodes. Coordinates are laid out in abstract units and mapped to
degrees around an anchor point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..graph import GraphParams, SubgoalGraph, SubgoalNode
from ..trajectory import BoundingBox, Trajectory, from_plane, normalize, to_plane

ANCHOR = (30.66, 104.06)  # lat, lon


@dataclass
class WorldSpec:
    nodes: dict[int, tuple[float, float]]          # id -> (x, y) in world units
    kinds: dict[int, str]
    routes: list[tuple[tuple[int, ...], float]]     # (node path, sampling weight)
    noise: list[float] | float = 0.04               # lateral wiggle, fraction of leg length
    points_per_leg: tuple[int, int] = (20, 36)
    n_trajectories: int = 400
    seed: int = 0
    unit_deg: float = 0.02                          # degrees of latitude per world unit
    node_jitter: float = 0.02                       # world units, per visit
    gps_noise: float = 0.0                          # world units, iid per point

    def __post_init__(self):
        for path, w in self.routes:
            if w <= 0:
                raise ValueError("route weights must be positive")
            if len(path) < 2:
                raise ValueError("a route needs at least two nodes")
            for n in path:
                if n not in self.nodes:
                    raise ValueError(f"route {path} references unknown node {n}")
        if isinstance(self.noise, list) and len(self.noise) != len(self.routes):
            raise ValueError("one noise amplitude per route")

    def route_noise(self, k: int) -> float:
        return self.noise[k] if isinstance(self.noise, list) else float(self.noise)

    def node_latlon(self, node_id: int) -> np.ndarray:
        x, y = self.nodes[node_id]
        plane = np.array([[x * self.unit_deg, y * self.unit_deg]])
        lat0 = ANCHOR[0]
        base = to_plane(np.array([ANCHOR]), lat0)
        return from_plane(plane + base, lat0)[0]


def _leg(p, q, n, amp, rng):
    s = np.linspace(0.0, 1.0, n)
    d = q - p
    length = np.hypot(*d)
    normal = np.array([-d[1], d[0]]) / length
    off = np.zeros(n)
    if amp > 0:
        for k in (1, 2, 3):
            off += rng.normal() / k * np.sin(k * np.pi * s)
        off *= amp * length
    return p[None, :] + s[:, None] * d[None, :] + off[:, None] * normal[None, :]


def sample_trajectory(spec: WorldSpec, route_idx: int, rng, traj_id: str, t0: float = 1.4778e9):
    path, _ = spec.routes[route_idx]
    amp = spec.route_noise(route_idx)
    pos = {n: np.array(spec.nodes[n], dtype=float) for n in path}
    if spec.node_jitter > 0:
        pos = {n: p + rng.normal(scale=spec.node_jitter, size=2) for n, p in pos.items()}
    pieces = []
    for i, (u, v) in enumerate(zip(path[:-1], path[1:])):
        n = int(rng.integers(spec.points_per_leg[0], spec.points_per_leg[1] + 1))
        leg = _leg(pos[u], pos[v], n, amp, rng)
        pieces.append(leg if i == 0 else leg[1:])
    xy = np.concatenate(pieces)
    if spec.gps_noise > 0:
        xy[1:-1] += rng.normal(scale=spec.gps_noise, size=(len(xy) - 2, 2))
    lat0 = ANCHOR[0]
    base = to_plane(np.array([ANCHOR]), lat0)
    coords = from_plane(xy * spec.unit_deg + base, lat0)
    t = t0 + 3.0 * np.arange(len(coords))
    return Trajectory(traj_id, coords, t, "normal").dedup()


def synth_world(spec: WorldSpec, n: int | None = None, seed: int | None = None, prefix: str = "w"):
    """Ground-truth graph plus ``n`` normal trajectories (route index in ``route_of``)."""
    n = spec.n_trajectories if n is None else n
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    w = np.array([r[1] for r in spec.routes], dtype=float)
    choice = rng.choice(len(spec.routes), size=n, p=w / w.sum())
    trajs = []
    for i, k in enumerate(choice):
        trajs.append(sample_trajectory(spec, int(k), rng, f"{prefix}{i:05d}"))
    route_of = {tr.id: int(k) for tr, k in zip(trajs, choice)}
    return ground_truth_graph(spec, trajs), trajs, route_of


def ground_truth_graph(spec: WorldSpec, trajs, params: GraphParams | None = None) -> SubgoalGraph:
    params = params or GraphParams()
    bbox = BoundingBox.around(trajs)
    ids = sorted(spec.nodes)
    centers = normalize(np.array([spec.node_latlon(i) for i in ids]), bbox, clamp=True)
    nodes = [SubgoalNode(i, (float(c[0]), float(c[1])), params.radius, spec.kinds[i])
             for i, c in zip(ids, centers)]
    edges: dict[tuple[int, int], int] = {}
    for path, _ in spec.routes:
        for e in zip(path[:-1], path[1:]):
            edges[e] = 1
    return SubgoalGraph(nodes, edges, params, bbox)


# ------------------------------------------------------------------- presets


def y_world(**kw) -> WorldSpec:
    """One source, a fork, two destinations. The fork sits before mid-route."""
    nodes = {0: (0.0, 0.0), 1: (0.0, 1.5), 2: (-2.0, 3.5), 3: (2.0, 3.5)}
    kinds = {0: "destination", 1: "turning_point", 2: "destination", 3: "destination"}
    routes = [((0, 1, 2), 1.0), ((0, 1, 3), 1.0)]
    kw.setdefault("n_trajectories", 200)
    return WorldSpec(nodes, kinds, routes, **kw)


def nine_node_world(**kw) -> WorldSpec:
    """Nine-node world with the two normal routes 7-6-5-2-1 and 7-8-9."""
    nodes = {
        7: (0.0, 0.0), 6: (2.0, 0.0), 5: (2.0, 1.5), 2: (4.5, 1.5), 1: (4.5, 4.0),
        8: (0.0, 1.5), 9: (-2.5, 1.5),
        # unused by the normal routes
        3: (6.5, 1.5), 4: (6.5, 4.0),
    }
    kinds = {7: "destination", 6: "turning_point", 5: "turning_point", 2: "turning_point",
             1: "destination", 8: "turning_point", 9: "destination",
             3: "destination", 4: "destination"}
    routes = [((7, 6, 5, 2, 1), 1.0), ((7, 8, 9), 1.0)]
    kw.setdefault("n_trajectories", 200)
    return WorldSpec(nodes, kinds, routes, **kw)


def default_world(**kw) -> WorldSpec:
    """Hub-and-spoke world: five routes that share only their end nodes.

    Two routes join the same origin/destination pair through different
    corners, so the destination alone does not identify the path.
    """
    nodes = {
        0: (0.0, 0.0),
        1: (2.5, 0.0), 2: (2.5, 2.0), 3: (5.0, 2.0),
        4: (0.0, 2.0), 5: (-2.5, 2.0),
        6: (-2.5, 0.0), 7: (-2.5, -2.5),
        10: (0.0, -2.5), 11: (5.0, -2.5),
        12: (-2.5, 4.5), 13: (2.5, 4.5),
    }
    kinds = {i: "turning_point" for i in nodes}
    for i in (0, 3, 5, 7, 13):
        kinds[i] = "destination"
    routes = [
        ((0, 1, 2, 3), 1.0),
        ((0, 4, 5), 1.0),
        ((0, 6, 7), 1.0),
        ((0, 10, 11, 3), 1.0),
        ((5, 12, 13), 1.0),
    ]
    kw.setdefault("n_trajectories", 500)
    return WorldSpec(nodes, kinds, routes, **kw)


PRESETS = {"y": y_world, "nine_node": nine_node_world, "default": default_world}
