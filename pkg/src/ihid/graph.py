"""Subgoal graph: destination clusters plus frequent turning points."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .trajectory import BoundingBox, Trajectory, normalize, subgoal_hits

log = logging.getLogger(__name__)


@dataclass
class GraphParams:
    """Graph construction knobs, all distances in normalised units."""

    f_min: int = 5            # turning bins need strictly more hits than this
    d_min: float = 0.12       # minimum centre-to-centre distance
    radius: float = 0.05      # region radius of every node
    theta_turn: float = 30.0  # degrees
    window: int = 5           # points on each side for the heading estimate
    bandwidth: float = 0.1    # mean-shift bandwidth for endpoints


@dataclass(frozen=True)
class SubgoalNode:
    id: int
    center: tuple[float, float]
    radius: float
    kind: str = "turning_point"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("node radius must be positive")
        if self.kind not in ("destination", "turning_point"):
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass
class SubgoalGraph:
    nodes: list[SubgoalNode]
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    params: GraphParams = field(default_factory=GraphParams)
    bbox: Optional[BoundingBox] = None

    def __post_init__(self):
        self.nodes = sorted(self.nodes, key=lambda n: n.id)
        self._index = {n.id: i for i, n in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise ValueError("duplicate node ids")
        for (u, v), c in self.edges.items():
            if u not in self._index or v not in self._index:
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
            if c < 1:
                raise ValueError("edge counts must be >= 1")
        self._arrays = None

    def __contains__(self, node_id) -> bool:
        return node_id in self._index

    @property
    def ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node(self, node_id: int) -> SubgoalNode:
        return self.nodes[self._index[node_id]]

    def position(self, node_id: int) -> int:
        """Row of ``node_id`` in :meth:`arrays` (and in tabular Q matrices)."""
        return self._index[node_id]

    def arrays(self):
        if self._arrays is None:
            centers = np.array([n.center for n in self.nodes], dtype=float).reshape(-1, 2)
            radii = np.array([n.radius for n in self.nodes], dtype=float)
            ids = np.array(self.ids, dtype=np.int64)
            self._arrays = (centers, radii, ids)
        return self._arrays

    def successors(self, node_id: int) -> list[int]:
        return sorted(v for (u, v) in self.edges if u == node_id)

    def destinations(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "destination"]

    # -- persistence

    def to_dict(self) -> dict:
        d = {
            "params": asdict(self.params),
            "nodes": [{"id": n.id, "x": n.center[0], "y": n.center[1],
                       "radius": n.radius, "kind": n.kind} for n in self.nodes],
            "edges": [{"from": u, "to": v, "count": c} for (u, v), c in sorted(self.edges.items())],
        }
        if self.bbox is not None:
            d["bbox"] = self.bbox.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SubgoalGraph":
        nodes = [SubgoalNode(int(n["id"]), (float(n["x"]), float(n["y"])), float(n["radius"]), n["kind"])
                 for n in d["nodes"]]
        edges = {(int(e["from"]), int(e["to"])): int(e["count"]) for e in d.get("edges", [])}
        bbox = BoundingBox.from_dict(d["bbox"]) if "bbox" in d else None
        return cls(nodes, edges, GraphParams(**d.get("params", {})), bbox)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SubgoalGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------------ clustering


def cluster_destinations(endpoints, bandwidth: float, tol: float = 1e-6, max_iter: int = 300):
    """Flat-kernel mean shift. Returns ``(centers, counts)`` sorted by count desc."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    pts = np.ascontiguousarray(endpoints, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("need at least one endpoint")
    modes = kernels.mean_shift(pts, float(bandwidth), float(tol), int(max_iter))

    members: list[list[int]] = []
    reps: list[np.ndarray] = []
    for i, m in enumerate(modes):
        for k, r in enumerate(reps):
            if np.hypot(*(m - r)) < bandwidth / 2:
                members[k].append(i)
                break
        else:
            reps.append(m)
            members.append([i])
    centers = np.array([modes[idx].mean(axis=0) for idx in members])
    counts = np.array([len(idx) for idx in members])
    order = sorted(range(len(counts)), key=lambda k: (-counts[k], centers[k, 0], centers[k, 1]))
    return centers[order], counts[order]


# --------------------------------------------------------------- turning points


@dataclass
class TurnCandidate:
    bin: tuple[int, int]
    center: tuple[float, float]
    count: int


def turning_indices(xy: np.ndarray, theta_turn: float, window: int) -> np.ndarray:
    """One index per turn: the sharpest point of each run of points over ``theta_turn``."""
    ang = kernels.heading_change(np.ascontiguousarray(xy, dtype=float), int(window))
    flag = ang > theta_turn
    if not flag.any():
        return np.zeros(0, dtype=int)
    edges = np.diff(np.concatenate(([0], flag.astype(int), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return np.array([a + int(np.argmax(ang[a:b])) for a, b in zip(starts, stops)], dtype=int)


def detect_turning_points(trajs_xy: Iterable[np.ndarray], theta_turn: float = 30.0,
                          window: int = 5, bin_size: float = 0.05) -> list[TurnCandidate]:
    """Spatially binned turn counts over normalised trajectories."""
    if not 0 < theta_turn < 180:
        raise ValueError("theta_turn must be in (0, 180)")
    if window < 1:
        raise ValueError("window must be >= 1")
    pts = []
    for xy in trajs_xy:
        for i in turning_indices(xy, theta_turn, window):
            pts.append(xy[i])
    if not pts:
        return []
    pts = np.array(pts)
    bins = np.floor(pts / bin_size).astype(int)
    uniq, inv, counts = np.unique(bins, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = []
    for k, b in enumerate(uniq):
        c = pts[inv == k].mean(axis=0)
        out.append(TurnCandidate((int(b[0]), int(b[1])), (float(c[0]), float(c[1])), int(counts[k])))
    out.sort(key=lambda c: (-c.count, c.bin))
    return out


# ---------------------------------------------------------------------- build


def build_graph(trajs: list[Trajectory], params: GraphParams | None = None,
                bbox: BoundingBox | None = None) -> SubgoalGraph:
    params = params or GraphParams()
    if not trajs:
        raise ValueError("empty training set")
    bbox = bbox or BoundingBox.around(trajs)
    xys = [normalize(tr.coords, bbox, clamp=True) for tr in trajs]

    ends = np.array([p for xy in xys for p in (xy[0], xy[-1])])
    dcenters, dcounts = cluster_destinations(ends, params.bandwidth)
    if len(dcenters) == 0:
        raise ValueError("no destinations found")

    chosen: list[tuple[np.ndarray, str]] = []

    def far_enough(c):
        return all(np.hypot(*(c - q)) > params.d_min for q, _ in chosen)

    for c in dcenters:
        # destinations are kept unless a busier destination already sits within d_min
        if far_enough(c):
            chosen.append((c, "destination"))
    for cand in detect_turning_points(xys, params.theta_turn, params.window, params.d_min / 2):
        if cand.count <= params.f_min:
            continue
        c = np.array(cand.center)
        if far_enough(c):
            chosen.append((c, "turning_point"))

    nodes = [SubgoalNode(i, (float(c[0]), float(c[1])), params.radius, kind)
             for i, (c, kind) in enumerate(chosen)]
    bare = SubgoalGraph(nodes, {}, params, bbox)
    return SubgoalGraph(nodes, count_edges(bare, xys), params, bbox)


def count_edges(graph: SubgoalGraph, xys: Iterable[np.ndarray]) -> dict[tuple[int, int], int]:
    edges: dict[tuple[int, int], int] = {}
    skipped = 0
    for xy in xys:
        _, seq = subgoal_hits(xy, graph)
        if len(seq) < 2:
            skipped += 1
            continue
        for u, v in zip(seq[:-1], seq[1:]):
            edges[(int(u), int(v))] = edges.get((int(u), int(v)), 0) + 1
    if skipped:
        log.info("%d training trajectories hit fewer than two nodes", skipped)
    return dict(sorted(edges.items()))


def nearest_node(graph: SubgoalGraph, p) -> Optional[int]:
    """Closest node id within twice the node radius; ties go to the lower id."""
    centers, radii, ids = graph.arrays()
    if len(ids) == 0:
        raise ValueError("graph has no nodes")
    d = np.hypot(centers[:, 0] - p[0], centers[:, 1] - p[1])
    k = int(np.argmin(d))
    return int(ids[k]) if d[k] <= 2 * radii[k] else None
