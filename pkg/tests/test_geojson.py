import json

import geojson
import numpy as np

from ihid.detector import LegVerdict, TrajectoryReport
from ihid.geojson import export_geojson, to_feature_collection
from ihid.trajectory import Trajectory


def _valid(fc):
    obj = geojson.loads(json.dumps(fc))
    assert obj.is_valid, obj.errors()
    return obj


def test_empty_collection_is_valid():
    fc = to_feature_collection([])
    assert fc == {"type": "FeatureCollection", "features": []}
    _valid(fc)


def test_single_trajectory_linestring(tmp_path):
    coords = np.array([[30.60, 104.00], [30.61, 104.02], [30.62, 104.05]])
    tr = Trajectory("t1", coords, np.arange(3.0), label="normal")
    rep = TrajectoryReport("t1", [LegVerdict(0, -2.0, None, "high_level_reject", True)], True, [0, 1])
    fc = to_feature_collection([tr], [rep])
    f = fc["features"][0]
    assert f["geometry"]["type"] == "LineString" and len(f["geometry"]["coordinates"]) == 3
    assert f["geometry"]["coordinates"][0] == [104.00, 30.60]
    assert f["properties"]["verdict"] == "anomaly" and f["properties"]["stage"] == "high_level_reject"
    _valid(fc)
    p = tmp_path / "x.geojson"
    export_geojson(p, [tr], [rep])
    _valid(json.loads(p.read_text()))


def test_world_with_nodes_valid(y_world):
    _, _, trajs, _, graph = y_world
    fc = to_feature_collection(trajs[:10], graph=graph)
    pts = [f for f in fc["features"] if f["geometry"]["type"] == "Point"]
    assert len(pts) == len(graph.nodes)
    assert all(f["properties"]["radius_deg"] > 0 for f in pts)
    _valid(fc)
