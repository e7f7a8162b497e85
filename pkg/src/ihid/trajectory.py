"""Trajectory ingestion, coordinate frames, resampling and segmentation."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

LABELS = ("normal", "big_detour", "small_detour", "route_switch", "unknown")
CSV_HEADER = ["traj_id", "t", "lat", "lon"]


class ParseError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class SegmentationError(ValueError):
    """Raised when a trajectory hits fewer than two subgoal regions."""


class GeoPoint(NamedTuple):
    lat: float
    lon: float
    t: Optional[float] = None


def _check_latlon(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ValueError("non-finite coordinate")
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise ValueError("coordinate out of bounds")


@dataclass
class Trajectory:
    """Ordered geo points. ``coords`` is an (n, 2) array of (lat, lon) degrees."""

    id: str
    coords: np.ndarray
    t: Optional[np.ndarray] = None
    label: str = "normal"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if len(self.coords) == 0:
            raise ValueError(f"trajectory {self.id!r} has no points")
        _check_latlon(self.coords[:, 0], self.coords[:, 1])
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=float)
            if len(self.t) != len(self.coords):
                raise ValueError("timestamp count does not match point count")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    def __len__(self):
        return len(self.coords)

    @property
    def points(self) -> list[GeoPoint]:
        ts = self.t if self.t is not None else [None] * len(self)
        return [GeoPoint(float(a), float(b), None if t is None else float(t))
                for (a, b), t in zip(self.coords, ts)]

    def dedup(self) -> "Trajectory":
        """Drop consecutive identical points."""
        keep = np.ones(len(self), dtype=bool)
        keep[1:] = np.any(np.diff(self.coords, axis=0) != 0, axis=1)
        t = None if self.t is None else self.t[keep]
        return Trajectory(self.id, self.coords[keep], t, self.label)


# ------------------------------------------------------------------- CSV I/O


def _parse_time(raw: str, line: int) -> float:
    raw = raw.strip()
    try:
        return float(int(raw))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"bad timestamp {raw!r}", line) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_trajectories(path, format: str = "csv") -> list[Trajectory]:
    """Read ``traj_id,t,lat,lon`` rows (optional trailing ``label``) into trajectories.

    Rows are grouped by id (first-appearance order) and time-sorted.
    Trajectories with fewer than two points are dropped and counted in the log.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv_text(text)


def parse_csv_text(text: str) -> list[Trajectory]:
    if not text.strip():
        raise ParseError("empty file")
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if header[:4] != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", 1)
    has_label = len(header) > 4 and header[4] == "label"

    groups: dict[str, list] = {}
    labels: dict[str, str] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 4:
            raise ParseError(f"expected at least 4 fields, got {len(row)}", lineno)
        tid = row[0].strip()
        t = _parse_time(row[1], lineno)
        try:
            lat, lon = float(row[2]), float(row[3])
        except ValueError:
            raise ParseError("lat/lon not numeric", lineno) from None
        if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
            raise ParseError(f"lat/lon out of bounds ({lat}, {lon})", lineno)
        groups.setdefault(tid, []).append((t, lat, lon))
        if has_label and len(row) > 4:
            labels[tid] = row[4].strip() or "unknown"

    if not groups:
        raise ParseError("no data rows")
    out, dropped = [], 0
    for tid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        if len(rows) < 2:
            dropped += 1
            continue
        arr = np.array(rows)
        tr = Trajectory(tid, arr[:, 1:], arr[:, 0], labels.get(tid, "normal")).dedup()
        if len(tr) < 2:
            dropped += 1
            continue
        out.append(tr)
    if dropped:
        log.warning("dropped %d trajectories with fewer than 2 points", dropped)
    return out


def write_trajectories(trajs: Iterable[Trajectory], path, with_label: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv_text(trajs, with_label))


def to_csv_text(trajs: Iterable[Trajectory], with_label: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER + (["label"] if with_label else []))
    for tr in trajs:
        ts = tr.t if tr.t is not None else np.arange(len(tr), dtype=float)
        for t, (lat, lon) in zip(ts, tr.coords):
            row = [tr.id, int(round(t)), repr(float(lat)), repr(float(lon))]
            if with_label:
                row.append(tr.label)
            w.writerow(row)
    return buf.getvalue()


# ------------------------------------------------------------ coordinate frames


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"degenerate bounding box {self}")

    @classmethod
    def around(cls, trajs: Iterable[Trajectory], margin: float = 0.1, square: bool = True):
        """Box enclosing all points, padded by ``margin`` of the span.

        With ``square=True`` the shorter side is widened so one normalised unit
        covers the same ground distance on both axes (equirectangular).
        """
        allc = np.concatenate([tr.coords for tr in trajs])
        lat0, lat1 = allc[:, 0].min(), allc[:, 0].max()
        lon0, lon1 = allc[:, 1].min(), allc[:, 1].max()
        clat = 0.5 * (lat0 + lat1)
        clon = 0.5 * (lon0 + lon1)
        k = math.cos(math.radians(clat))
        half_lat = 0.5 * (lat1 - lat0)
        half_lon = 0.5 * (lon1 - lon0)
        if square:
            half = max(half_lat, half_lon * k)
            half_lat, half_lon = half, half / k
        half_lat = max(half_lat * (1 + margin), 1e-9)
        half_lon = max(half_lon * (1 + margin), 1e-9)
        return cls(clat - half_lat, clat + half_lat, clon - half_lon, clon + half_lon)

    def to_dict(self):
        return {"lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lat_min"], d["lat_max"], d["lon_min"], d["lon_max"])


def normalize(coords, bbox: BoundingBox, clamp: bool = False) -> np.ndarray:
    """Map (lat, lon) rows to (x, y) in [-1, 1]^2; x follows lon, y follows lat."""
    c = np.asarray(coords, dtype=float).reshape(-1, 2)
    x = 2.0 * (c[:, 1] - bbox.lon_min) / (bbox.lon_max - bbox.lon_min) - 1.0
    y = 2.0 * (c[:, 0] - bbox.lat_min) / (bbox.lat_max - bbox.lat_min) - 1.0
    xy = np.column_stack((x, y))
    if clamp:
        return np.clip(xy, -1.0, 1.0)
    if np.any(np.abs(xy) > 1.0 + 1e-12):
        raise ValueError("point outside bounding box (pass clamp=True to clip)")
    return xy


def denormalize(xy, bbox: BoundingBox) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    lon = (xy[:, 0] + 1.0) * 0.5 * (bbox.lon_max - bbox.lon_min) + bbox.lon_min
    lat = (xy[:, 1] + 1.0) * 0.5 * (bbox.lat_max - bbox.lat_min) + bbox.lat_min
    return np.column_stack((lat, lon))


def to_plane(coords, lat0: float) -> np.ndarray:
    """Equirectangular (x, y) in degrees of latitude."""
    c = np.asarray(coords, dtype=float).reshape(-1, 2)
    return np.column_stack((c[:, 1] * math.cos(math.radians(lat0)), c[:, 0]))


def from_plane(xy, lat0: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return np.column_stack((xy[:, 1], xy[:, 0] / math.cos(math.radians(lat0))))


def path_length(xy) -> float:
    xy = np.asarray(xy, dtype=float)
    return float(np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1)).sum())


def resample_arclength(xy, L: int) -> np.ndarray:
    """``L`` points evenly spaced by arc length along the polyline ``xy``."""
    xy = np.ascontiguousarray(xy, dtype=float).reshape(-1, 2)
    if L < 2:
        raise ValueError("L must be >= 2")
    if len(xy) < 2 or path_length(xy) == 0.0:
        raise ValueError("polyline has zero length")
    return kernels.resample_polyline(xy, int(L))


# ---------------------------------------------------------------- segmentation


@dataclass
class Segmentation:
    subgoal_seq: list[int]
    legs: list[np.ndarray]
    raw_legs: list[np.ndarray]
    # start/stop point indices (inclusive) of each raw leg in the source trajectory
    bounds: list[tuple[int, int]] = field(default_factory=list)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        s = self.subgoal_seq
        return list(zip(s[:-1], s[1:]))


def subgoal_hits(xy: np.ndarray, graph) -> tuple[np.ndarray, np.ndarray]:
    """Point indices where the walk first enters a node region, and the node ids."""
    centers, radii, ids = graph.arrays()
    idx, k = kernels.region_hits(np.ascontiguousarray(xy, dtype=float), centers, radii)
    return idx, ids[k]


def segment_by_graph(traj: Trajectory, graph, bbox: BoundingBox, L: int = 64) -> Segmentation:
    """Split ``traj`` at subgoal-region entries into fixed-length normalised legs.

    Leg ``i`` spans from the entry into node ``g_i`` to the entry into
    ``g_{i+1}`` (both points included). Points before the first entry join
    the first leg, points after the last entry join the last leg.
    """
    if len(graph.nodes) == 0:
        raise ValueError("graph has no nodes")
    xy = normalize(traj.coords, bbox, clamp=True)
    idx, nodes = subgoal_hits(xy, graph)
    if len(idx) < 2:
        raise SegmentationError(f"trajectory {traj.id!r} hits {len(idx)} subgoal region(s)")
    k = len(idx)
    bounds = []
    for i in range(k - 1):
        a = 0 if i == 0 else int(idx[i])
        b = len(xy) - 1 if i == k - 2 else int(idx[i + 1])
        bounds.append((a, b))
    raw_legs, legs = [], []
    for a, b in bounds:
        raw = traj.coords[a:b + 1]
        seg = xy[a:b + 1]
        if len(seg) < 2 or path_length(seg) == 0.0:
            # two entries on the same point cannot happen (ids differ), but a
            # stationary leg can; replicate the point so the leg is well defined
            leg = np.repeat(seg[:1], L, axis=0)
        else:
            leg = resample_arclength(seg, L)
        raw_legs.append(raw)
        legs.append(leg)
    return Segmentation([int(n) for n in nodes], legs, raw_legs, bounds)
