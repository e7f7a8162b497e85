"""GeoJSON export of trajectories, verdicts and subgoal nodes for inspection."""
from __future__ import annotations

import json
from typing import Iterable, Optional

from .detector import TrajectoryReport
from .graph import SubgoalGraph
from .trajectory import Trajectory, denormalize


def _stage(rep: TrajectoryReport) -> str:
    for v in rep.legs:
        if v.is_anomaly:
            return v.stage
    return "normal"


def to_feature_collection(trajs: Iterable[Trajectory], reports: Optional[Iterable[TrajectoryReport]] = None,
                          graph: Optional[SubgoalGraph] = None) -> dict:
    """FeatureCollection: one LineString per trajectory, one Point per subgoal node.

    Coordinates are (lon, lat) as GeoJSON requires. Node radii are given in
    normalised units and in degrees.
    """
    by_id = {r.traj_id: r for r in (reports or [])}
    feats = []
    for tr in trajs:
        rep = by_id.get(tr.id)
        coords = [[float(lon), float(lat)] for lat, lon in tr.coords]
        geom = {"type": "LineString", "coordinates": coords} if len(coords) >= 2 else \
            {"type": "Point", "coordinates": coords[0]}
        feats.append({"type": "Feature", "geometry": geom, "properties": {
            "id": tr.id, "label": tr.label,
            "verdict": None if rep is None else ("anomaly" if rep.is_anomaly else "normal"),
            "stage": None if rep is None else _stage(rep),
        }})
    if graph is not None:
        if graph.bbox is None:
            raise ValueError("graph has no bounding box; cannot place nodes")
        bb = graph.bbox
        for n in graph.nodes:
            lat, lon = denormalize([n.center], bb)[0]
            feats.append({"type": "Feature",
                          "geometry": {"type": "Point", "coordinates": [float(lon), float(lat)]},
                          "properties": {"node_id": n.id, "kind": n.kind, "radius": n.radius,
                                         "radius_deg": n.radius * 0.5 * (bb.lon_max - bb.lon_min)}})
    return {"type": "FeatureCollection", "features": feats}


def export_geojson(path, trajs, reports=None, graph=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_feature_collection(trajs, reports, graph), fh)
