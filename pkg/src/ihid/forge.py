"""Labelled anomaly synthesis: big detours, small detours, route switches.

Geometry runs in an equirectangular plane measured in degrees of latitude,
so ``d`` and ``sigma`` are in the dataset's native degree units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import (BoundingBox, SegmentationError, Trajectory, from_plane,
                         segment_by_graph, to_plane)


class ForgeError(ValueError):
    pass


@dataclass
class ForgeParams:
    d: float = 0.04          # extra path length
    omega: float = 0.6       # share of the whole trajectory replaced (big detour)
    omega_star: float = 0.6  # share of one leg replaced (small detour)
    sigma: float = 0.03      # minimum split-point separation (route switch)
    d_small: float | None = None  # small-detour extra length; falls back to ``d``

    def __post_init__(self):
        for k in ("d", "omega", "omega_star", "sigma"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.omega >= 1 or self.omega_star >= 1:
            raise ValueError("proportions must be < 1")

    @property
    def small_d(self) -> float:
        return self.d if self.d_small is None else self.d_small


def _plane(traj: Trajectory):
    lat0 = float(traj.coords[:, 0].mean())
    return to_plane(traj.coords, lat0), lat0


def _cum(xy):
    return np.concatenate(([0.0], np.cumsum(np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1)))))


def detour_height(chord: float, extra: float) -> float:
    return math.sqrt(extra * extra + 2.0 * extra * chord) / 2.0


def detour_polyline(a, b, extra: float, rng=None, side: int | None = None) -> np.ndarray:
    """Wedge ``a -> m -> b`` whose length exceeds ``|ab|`` by ``extra``.

    ``m`` is the midpoint of ``ab`` pushed sideways; the side is a fair coin
    from ``rng`` unless given as +1/-1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    chord = float(np.hypot(*ab))
    if chord == 0.0:
        raise ForgeError("detour endpoints coincide")
    if extra <= 0:
        raise ForgeError("extra length must be positive")
    if side is None:
        side = 1 if (rng is None or rng.random() < 0.5) else -1
    h = detour_height(chord, extra)
    normal = np.array([-ab[1], ab[0]]) / chord
    m = 0.5 * (a + b) + side * h * normal
    return np.array([a, m, b])


def _wedge_interior(wedge: np.ndarray, n: int) -> np.ndarray:
    """``n`` points spread along the wedge (endpoints excluded), apex included."""
    a, m, b = wedge
    l1 = float(np.hypot(*(m - a)))
    l2 = float(np.hypot(*(b - m)))
    u = (l1 + l2) * np.arange(1, n + 1) / (n + 1)
    k = int(np.argmin(np.abs(u - l1)))
    u[k] = l1
    out = np.empty((n, 2))
    first = u <= l1
    out[first] = a + (u[first, None] / l1) * (m - a)
    out[~first] = m + ((u[~first, None] - l1) / l2) * (b - m)
    return out


def _replace_span(xy, cum, lo_arc, hi_arc, d, rng, side=None):
    """Swap the points strictly between the span's snapped ends for a wedge."""
    i0 = int(np.searchsorted(cum, lo_arc, side="right") - 1)
    i1 = int(np.searchsorted(cum, hi_arc, side="left"))
    i1 = min(i1, len(xy) - 1)
    if i1 - i0 < 2:
        raise ForgeError("span holds no interior point to replace")
    a, b = xy[i0], xy[i1]
    chord = float(np.hypot(*(b - a)))
    if chord == 0.0:
        raise ForgeError("span starts and ends at the same place")
    # wedge replaces the original arc, so it must be that arc plus d
    extra = (cum[i1] - cum[i0]) + d - chord
    wedge = detour_polyline(a, b, extra, rng, side)
    out = xy.copy()
    out[i0 + 1:i1] = _wedge_interior(wedge, i1 - i0 - 1)
    return out, (i0, i1)


def _splice(traj: Trajectory, new_xy, span, lat0) -> np.ndarray:
    """Original coordinates with only the replaced interior mapped back from the plane."""
    i0, i1 = span
    out = traj.coords.copy()
    out[i0 + 1:i1] = from_plane(new_xy[i0 + 1:i1], lat0)
    return out


def make_big_detour(traj: Trajectory, d: float, omega: float, rng) -> Trajectory:
    xy, lat0 = _plane(traj)
    cum = _cum(xy)
    total = cum[-1]
    if total <= 0:
        raise ForgeError("trajectory has zero length")
    start = rng.uniform(0.0, (1.0 - omega) * total)
    new, span = _replace_span(xy, cum, start, start + omega * total, d, rng)
    return Trajectory(f"{traj.id}~bd", _splice(traj, new, span, lat0), traj.t, "big_detour")


def make_small_detour(traj: Trajectory, seg, graph, bbox: BoundingBox, d: float,
                      omega_star: float, rng, retries: int = 10) -> Trajectory:
    """Detour inside one leg; retried until the subgoal sequence is unchanged."""
    if len(seg.legs) < 1:
        raise ForgeError("segmentation has no legs")
    xy, lat0 = _plane(traj)
    cum = _cum(xy)
    for _ in range(retries):
        k = int(rng.integers(len(seg.bounds)))
        lo, hi = seg.bounds[k]
        leg_arc = cum[hi] - cum[lo]
        if leg_arc <= 0:
            continue
        start = cum[lo] + rng.uniform(0.0, (1.0 - omega_star) * leg_arc)
        try:
            new, span = _replace_span(xy, cum, start, start + omega_star * leg_arc, d, rng)
        except ForgeError:
            continue
        out = Trajectory(f"{traj.id}~sd", _splice(traj, new, span, lat0), traj.t, "small_detour")
        try:
            if segment_by_graph(out, graph, bbox, 2).subgoal_seq == seg.subgoal_seq:
                return out
        except SegmentationError:
            pass
    raise ForgeError(f"no subgoal-preserving small detour after {retries} tries")


def split_point(xy: np.ndarray):
    """Arc-length midpoint of ``xy`` and the index of the first point past it."""
    cum = _cum(xy)
    half = 0.5 * cum[-1]
    j = int(np.searchsorted(cum, half, side="right"))
    j = min(max(j, 1), len(xy) - 1)
    u = (half - cum[j - 1]) / max(cum[j] - cum[j - 1], 1e-300)
    return xy[j - 1] + u * (xy[j] - xy[j - 1]), j


def make_route_switch(traj_a: Trajectory, traj_b: Trajectory, sigma: float, rng=None):
    """First half of A, a straight bridge, second half of B; None if split points are closer than sigma."""
    lat0 = float(np.concatenate([traj_a.coords, traj_b.coords])[:, 0].mean())
    xa = to_plane(traj_a.coords, lat0)
    xb = to_plane(traj_b.coords, lat0)
    pa, ja = split_point(xa)
    pb, jb = split_point(xb)
    gap = float(np.hypot(*(pb - pa)))
    if gap < sigma:
        return None
    steps = np.concatenate([np.sqrt((np.diff(x, axis=0) ** 2).sum(axis=1)) for x in (xa, xb)])
    spacing = float(np.median(steps[steps > 0])) if np.any(steps > 0) else gap
    n_mid = max(int(math.ceil(gap / spacing)) - 1, 0)
    s = np.arange(1, n_mid + 1) / (n_mid + 1)
    bridge = pa + s[:, None] * (pb - pa)
    xy = np.concatenate([xa[:ja], pa[None], bridge, pb[None], xb[jb:]])
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.any(np.diff(xy, axis=0) != 0, axis=1)
    xy = xy[keep]
    t = None
    if traj_a.t is not None:
        dt = float(np.median(np.diff(traj_a.t))) if len(traj_a.t) > 1 else 1.0
        t = traj_a.t[0] + dt * np.arange(len(xy))
    return Trajectory(f"{traj_a.id}~rs~{traj_b.id}", from_plane(xy, lat0), t, "route_switch")


def forge_many(kind: str, normals: list[Trajectory], n: int, params: ForgeParams, rng,
               graph=None, bbox=None, max_tries: int | None = None) -> list[Trajectory]:
    """``n`` anomalies of ``kind`` built from randomly drawn normal trajectories."""
    out: list[Trajectory] = []
    tries = 0
    max_tries = max_tries or 50 * max(n, 1)
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise ForgeError(f"could only forge {len(out)}/{n} {kind} anomalies")
        tr = normals[int(rng.integers(len(normals)))]
        try:
            if kind == "big_detour":
                f = make_big_detour(tr, params.d, params.omega, rng)
            elif kind == "small_detour":
                seg = segment_by_graph(tr, graph, bbox, 2)
                f = make_small_detour(tr, seg, graph, bbox, params.small_d, params.omega_star, rng)
            elif kind == "route_switch":
                other = normals[int(rng.integers(len(normals)))]
                f = make_route_switch(tr, other, params.sigma, rng)
                if f is None:
                    continue
            else:
                raise ValueError(f"unknown anomaly kind {kind!r}")
        except (ForgeError, SegmentationError):
            continue
        f.id = f"{f.id}#{len(out)}"
        out.append(f)
    return out
