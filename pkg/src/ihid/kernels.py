"""Hot geometry loops.

Every kernel has a numba loop version (``*_nb``) and a vectorised numpy
version (``*_np``). The public name dispatches on ``_accel.HAVE_NUMBA`` so
``IHID_DISABLE_NUMBA=1`` selects the numpy path everywhere.
"""
import numpy as np

from ._accel import HAVE_NUMBA, maybe_njit


# ---------------------------------------------------------------- arc length


@maybe_njit
def resample_polyline_nb(xy, n_out):
    n = xy.shape[0]
    cum = np.zeros(n)
    for i in range(1, n):
        dx = xy[i, 0] - xy[i - 1, 0]
        dy = xy[i, 1] - xy[i - 1, 1]
        cum[i] = cum[i - 1] + np.sqrt(dx * dx + dy * dy)
    total = cum[n - 1]
    out = np.empty((n_out, 2))
    j = 0
    for k in range(n_out):
        s = total * k / (n_out - 1)
        while j < n - 2 and cum[j + 1] < s:
            j += 1
        seg = cum[j + 1] - cum[j]
        if seg > 0.0:
            u = (s - cum[j]) / seg
        else:
            u = 0.0
        if u > 1.0:
            u = 1.0
        out[k, 0] = xy[j, 0] + u * (xy[j + 1, 0] - xy[j, 0])
        out[k, 1] = xy[j, 1] + u * (xy[j + 1, 1] - xy[j, 1])
    out[0, 0] = xy[0, 0]
    out[0, 1] = xy[0, 1]
    out[n_out - 1, 0] = xy[n - 1, 0]
    out[n_out - 1, 1] = xy[n - 1, 1]
    return out


def resample_polyline_np(xy, n_out):
    seg = np.sqrt(np.sum(np.diff(xy, axis=0) ** 2, axis=1))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    s = cum[-1] * np.arange(n_out) / (n_out - 1)
    # zero-length segments make cum non-strictly increasing; interp handles
    # repeated abscissae by taking the rightmost value, which stays on the line
    out = np.column_stack((np.interp(s, cum, xy[:, 0]), np.interp(s, cum, xy[:, 1])))
    out[0] = xy[0]
    out[-1] = xy[-1]
    return out


# ------------------------------------------------------------ region entries


@maybe_njit
def region_hits_nb(xy, centers, radii):
    n = xy.shape[0]
    m = centers.shape[0]
    idx = np.empty(n, dtype=np.int64)
    node = np.empty(n, dtype=np.int64)
    count = 0
    last = -1
    for i in range(n):
        best = -1
        best_d = np.inf
        for k in range(m):
            dx = xy[i, 0] - centers[k, 0]
            dy = xy[i, 1] - centers[k, 1]
            d = np.sqrt(dx * dx + dy * dy)
            if d <= radii[k] and d < best_d:
                best = k
                best_d = d
        if best >= 0 and best != last:
            idx[count] = i
            node[count] = best
            count += 1
            last = best
    return idx[:count], node[:count]


def region_hits_np(xy, centers, radii):
    d = np.sqrt(((xy[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    d = np.where(d <= radii[None, :], d, np.inf)
    best = np.argmin(d, axis=1)
    inside = np.isfinite(d[np.arange(len(xy)), best])
    pts = np.flatnonzero(inside)
    nodes = best[pts]
    if len(nodes) == 0:
        return pts.astype(np.int64), nodes.astype(np.int64)
    keep = np.ones(len(nodes), dtype=bool)
    keep[1:] = nodes[1:] != nodes[:-1]
    return pts[keep].astype(np.int64), nodes[keep].astype(np.int64)


# ---------------------------------------------------------------- mean shift


@maybe_njit
def mean_shift_nb(points, bandwidth, tol, max_iter):
    n = points.shape[0]
    modes = points.copy()
    bw2 = bandwidth * bandwidth
    for i in range(n):
        cx = modes[i, 0]
        cy = modes[i, 1]
        for _ in range(max_iter):
            sx = 0.0
            sy = 0.0
            c = 0
            for j in range(n):
                dx = points[j, 0] - cx
                dy = points[j, 1] - cy
                if dx * dx + dy * dy <= bw2:
                    sx += points[j, 0]
                    sy += points[j, 1]
                    c += 1
            if c == 0:
                break
            nx = sx / c
            ny = sy / c
            shift = np.sqrt((nx - cx) ** 2 + (ny - cy) ** 2)
            cx = nx
            cy = ny
            if shift < tol:
                break
        modes[i, 0] = cx
        modes[i, 1] = cy
    return modes


def mean_shift_np(points, bandwidth, tol, max_iter):
    modes = points.copy()
    active = np.ones(len(points), dtype=bool)
    bw2 = bandwidth * bandwidth
    for _ in range(max_iter):
        if not active.any():
            break
        cur = modes[active]
        w = (((cur[:, None, :] - points[None, :, :]) ** 2).sum(axis=2) <= bw2).astype(float)
        cnt = w.sum(axis=1)
        # a point always sees itself on the first step; later modes may drift
        # into empty space only if bandwidth is tiny, then they stay put
        new = np.where(cnt[:, None] > 0, (w @ points) / np.maximum(cnt, 1)[:, None], cur)
        shift = np.sqrt(((new - cur) ** 2).sum(axis=1))
        modes[active] = new
        idx = np.flatnonzero(active)
        active[idx[shift < tol]] = False
    return modes


# ----------------------------------------------------------- heading change


@maybe_njit
def heading_change_nb(xy, w):
    n = xy.shape[0]
    out = np.zeros(n)
    for i in range(n):
        a = i - w
        b = i + w
        if a < 0:
            a = 0
        if b > n - 1:
            b = n - 1
        if a == i or b == i:
            continue
        ux = xy[i, 0] - xy[a, 0]
        uy = xy[i, 1] - xy[a, 1]
        vx = xy[b, 0] - xy[i, 0]
        vy = xy[b, 1] - xy[i, 1]
        if ux * ux + uy * uy == 0.0 or vx * vx + vy * vy == 0.0:
            continue
        ang = np.arctan2(ux * vy - uy * vx, ux * vx + uy * vy)
        out[i] = abs(ang) * 180.0 / np.pi
    return out


def heading_change_np(xy, w):
    n = len(xy)
    i = np.arange(n)
    a = np.maximum(i - w, 0)
    b = np.minimum(i + w, n - 1)
    u = xy[i] - xy[a]
    v = xy[b] - xy[i]
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    dot = (u * v).sum(axis=1)
    ok = (a != i) & (b != i) & ((u ** 2).sum(axis=1) > 0) & ((v ** 2).sum(axis=1) > 0)
    out = np.zeros(n)
    out[ok] = np.abs(np.degrees(np.arctan2(cross[ok], dot[ok])))
    return out


if HAVE_NUMBA:
    resample_polyline = resample_polyline_nb
    region_hits = region_hits_nb
    mean_shift = mean_shift_nb
    heading_change = heading_change_nb
else:
    resample_polyline = resample_polyline_np
    region_hits = region_hits_np
    mean_shift = mean_shift_np
    heading_change = heading_change_np
