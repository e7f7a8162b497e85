import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ihid.graph import GraphParams, SubgoalGraph, SubgoalNode
from ihid.trajectory import (BoundingBox, ParseError, SegmentationError, Trajectory, denormalize,
                             normalize, parse_csv_text, parse_trajectories, path_length,
                             resample_arclength, segment_by_graph, to_csv_text)


# ------------------------------------------------------------------ parsing


def test_two_row_csv_gives_one_trajectory():
    trs = parse_csv_text("traj_id,t,lat,lon\na,0,30.0,104.0\na,1,30.1,104.1\n")
    assert len(trs) == 1 and len(trs[0]) == 2 and trs[0].id == "a"


def test_out_of_bounds_latitude_reports_line():
    with pytest.raises(ParseError) as e:
        parse_csv_text("traj_id,t,lat,lon\na,0,30.0,104.0\na,1,91,104.1\n")
    assert e.value.line == 3
    assert "3" in str(e.value)


def test_interleaved_ids_grouped_and_sorted():
    rows = [("a", 5, 1.0, 2.0), ("b", 3, 3.0, 4.0), ("a", 1, 1.1, 2.1), ("b", 0, 3.1, 4.1),
            ("a", 3, 1.2, 2.2), ("b", 9, 3.2, 4.2), ("a", 2, 1.3, 2.3), ("b", 4, 3.3, 4.3),
            ("a", 4, 1.4, 2.4), ("b", 1, 3.4, 4.4)]
    text = "traj_id,t,lat,lon\n" + "".join(f"{i},{t},{la},{lo}\n" for i, t, la, lo in rows)
    trs = {t.id: t for t in parse_csv_text(text)}
    # hand-grouped oracle
    for tid in ("a", "b"):
        mine = sorted((t, la, lo) for i, t, la, lo in rows if i == tid)
        assert np.array_equal(trs[tid].t, [m[0] for m in mine])
        assert np.array_equal(trs[tid].coords, [[m[1], m[2]] for m in mine])


def test_empty_and_headerless_files_rejected():
    with pytest.raises(ParseError):
        parse_csv_text("")
    with pytest.raises(ParseError):
        parse_csv_text("id,time,x,y\na,0,1,2\n")


def test_single_point_trajectories_dropped(caplog):
    trs = parse_csv_text("traj_id,t,lat,lon\na,0,1,2\nb,0,1,2\nb,1,1,3\n")
    assert [t.id for t in trs] == ["b"]
    assert "dropped 1" in caplog.text


def test_iso_timestamps_and_label_column(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("traj_id,t,lat,lon,label\nq,2024-01-01T00:00:10Z,1,2,small_detour\n"
                 "q,2024-01-01T00:00:00Z,1,3,small_detour\n")
    (tr,) = parse_trajectories(p)
    assert tr.label == "small_detour"
    assert tr.t[1] - tr.t[0] == 10 and tr.coords[0, 1] == 3


def test_consecutive_duplicates_removed():
    trs = parse_csv_text("traj_id,t,lat,lon\na,0,1,2\na,1,1,2\na,2,1,3\n")
    assert len(trs[0]) == 2


def test_csv_roundtrip():
    tr = Trajectory("z", [[1.0, 2.0], [1.5, 2.5], [1.25, 2.75]], [0, 3, 6], "route_switch")
    (back,) = parse_csv_text(to_csv_text([tr], with_label=True))
    assert np.array_equal(back.coords, tr.coords) and back.label == "route_switch"


# ------------------------------------------------------------ normalisation

BB = BoundingBox(30.0, 31.0, 104.0, 106.0)


def test_center_and_corner():
    assert np.allclose(normalize([[30.5, 105.0]], BB), [[0, 0]])
    assert np.allclose(normalize([[30.0, 104.0]], BB), [[-1, -1]])


def test_degenerate_bbox():
    with pytest.raises(ValueError):
        BoundingBox(1, 1, 0, 2)


def test_outside_box_needs_clamp():
    with pytest.raises(ValueError):
        normalize([[29.0, 105.0]], BB)
    assert normalize([[29.0, 105.0]], BB, clamp=True)[0, 1] == -1.0


def test_roundtrip_100_random_points(rng):
    pts = np.column_stack((rng.uniform(30, 31, 100), rng.uniform(104, 106, 100)))
    assert np.max(np.abs(denormalize(normalize(pts, BB), BB) - pts)) < 1e-9


def test_square_box_is_isotropic():
    tr = Trajectory("a", [[30.0, 104.0], [30.2, 104.5]])
    bb = BoundingBox.around([tr])
    k = np.cos(np.radians(0.5 * (bb.lat_min + bb.lat_max)))
    assert np.isclose((bb.lon_max - bb.lon_min) * k, bb.lat_max - bb.lat_min)


# --------------------------------------------------------------- resampling


def test_resample_straight():
    assert np.allclose(resample_arclength([[0, 0], [1, 0]], 3), [[0, 0], [0.5, 0], [1, 0]])


def test_resample_identity_on_uniform_input():
    xy = np.column_stack((np.linspace(0, 2, 7), np.zeros(7)))
    assert np.allclose(resample_arclength(xy, 7), xy, atol=1e-12)


def test_resample_l_shape_oracle():
    out = resample_arclength([[0, 0], [1, 0], [1, 1]], 5)
    # analytic arc-length parametrisation
    expect = [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]]
    assert np.allclose(out, expect, atol=1e-12)


def test_resample_errors():
    with pytest.raises(ValueError):
        resample_arclength([[0, 0], [0, 0]], 4)
    with pytest.raises(ValueError):
        resample_arclength([[0, 0], [1, 0]], 1)


def _on_polyline(p, xy, tol=1e-9):
    for a, b in zip(xy[:-1], xy[1:]):
        ab = b - a
        n2 = ab @ ab
        u = 0.0 if n2 == 0 else np.clip((p - a) @ ab / n2, 0, 1)
        if np.hypot(*(a + u * ab - p)) < tol:
            return True
    return False


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.just(2)),
              elements=st.floats(-5, 5, allow_nan=False)),
       st.integers(2, 40))
def test_resample_properties(xy, L):
    if path_length(xy) < 1e-3:
        return
    out = resample_arclength(xy, L)
    assert out.shape == (L, 2)
    assert np.array_equal(out[0], xy[0]) and np.array_equal(out[-1], xy[-1])
    for p in out:
        assert _on_polyline(p, xy, tol=1e-7)
    # uniform spacing in arc length along the input
    cum = np.concatenate(([0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))))
    target = np.linspace(0, cum[-1], L)
    assert np.allclose(np.diff(target), cum[-1] / (L - 1), rtol=1e-6)


# ------------------------------------------------------------- segmentation


def _line_graph(xs, r=0.05):
    nodes = [SubgoalNode(i + 7, (x, 0.0), r, "destination") for i, x in enumerate(xs)]
    return SubgoalGraph(nodes, {}, GraphParams(radius=r), BoundingBox(-1, 1, -1, 1))


def _traj_from_xy(xy, tid="s"):
    # with the (-1,1) box, lat = y and lon = x
    xy = np.asarray(xy, dtype=float)
    return Trajectory(tid, np.column_stack((xy[:, 1], xy[:, 0])))


def test_segment_three_nodes():
    g = _line_graph([-0.8, 0.0, 0.8])
    xy = np.column_stack((np.linspace(-0.9, 0.9, 37), np.zeros(37)))
    seg = segment_by_graph(_traj_from_xy(xy), g, g.bbox, L=16)
    assert seg.subgoal_seq == [7, 8, 9]
    assert len(seg.legs) == 2 and all(leg.shape == (16, 2) for leg in seg.legs)
    assert all(np.all(np.abs(leg) <= 1) for leg in seg.legs)


def test_segment_inside_one_region_fails():
    g = _line_graph([0.0, 0.8])
    with pytest.raises(SegmentationError):
        segment_by_graph(_traj_from_xy([[0.0, 0.0], [0.01, 0.01]]), g, g.bbox)


def test_segment_recovers_concatenated_legs():
    g = _line_graph([-0.5, 0.5], r=0.05)
    g = SubgoalGraph(g.nodes + [SubgoalNode(20, (0.5, 0.6), 0.05, "destination")], {}, g.params, g.bbox)
    leg1 = np.column_stack((np.linspace(-0.5, 0.5, 21), np.zeros(21)))
    leg2 = np.column_stack((np.full(13, 0.5), np.linspace(0, 0.6, 13)))
    xy = np.concatenate([leg1, leg2[1:]])
    seg = segment_by_graph(_traj_from_xy(xy), g, g.bbox, L=8)
    assert seg.subgoal_seq == [7, 8, 20]
    # hits happen at the first point inside each region
    i1 = int(np.flatnonzero(np.hypot(*(xy - [0.5, 0]).T) <= 0.05)[0])
    i2 = int(np.flatnonzero(np.hypot(*(xy - [0.5, 0.6]).T) <= 0.05)[0])
    assert seg.bounds == [(0, i1), (i1, len(xy) - 1)]
    assert np.allclose(seg.legs[0][0], leg1[0]) and np.allclose(seg.legs[0][-1], xy[i1])
    assert np.allclose(seg.legs[1][-1], leg2[-1])
    assert i2 > i1


def test_raw_legs_partition_the_points():
    g = _line_graph([-0.6, 0.0, 0.6])
    xy = np.column_stack((np.linspace(-0.7, 0.7, 50), 0.02 * np.sin(np.linspace(0, 9, 50))))
    tr = _traj_from_xy(xy)
    seg = segment_by_graph(tr, g, g.bbox, L=8)
    joined = np.concatenate([seg.raw_legs[0]] + [r[1:] for r in seg.raw_legs[1:]])
    assert np.array_equal(joined, tr.coords)
    s = seg.subgoal_seq
    assert all(a != b for a, b in zip(s, s[1:]))
    assert len(seg.legs) == len(s) - 1
