"""Compiled fast path for the consolidation geometry kernel.

Byte-for-byte port of the reference predicates in geom2d (points_in_polygon,
segments_cross_edges, clip_intervals) specialized for the consolidation inner
loop: classify frontier fragments against one polygon and emit the inside
sub-intervals. The reference implementations stay authoritative; equivalence
is asserted by randomized tests. Import of this module may fail (no numba);
callers must fall back to the reference path.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .geom2d import GEOM_EPS, MIN_PIECE_LEN


@njit(cache=True)
def _point_in(px, py, vx, vy, tol):
    n = vx.shape[0]
    inside = False
    for k in range(n):
        x1 = vx[k]
        y1 = vy[k]
        k2 = k + 1 if k + 1 < n else 0
        x2 = vx[k2]
        y2 = vy[k2]
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xint:
                inside = not inside
    if inside:
        return True
    tol2 = tol * tol
    for k in range(n):
        x1 = vx[k]
        y1 = vy[k]
        k2 = k + 1 if k + 1 < n else 0
        ex = vx[k2] - x1
        ey = vy[k2] - y1
        ww = ex * ex + ey * ey
        t = ((px - x1) * ex + (py - y1) * ey) / ww
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        dx = px - (x1 + t * ex)
        dy = py - (y1 + t * ey)
        if dx * dx + dy * dy <= tol2:
            return True
    return False


@njit(cache=True)
def _seg_crosses(ax, ay, bx, by, vx, vy):
    n = vx.shape[0]
    rx = bx - ax
    ry = by - ay
    slack = 1e-9
    for k in range(n):
        cx = vx[k]
        cy = vy[k]
        k2 = k + 1 if k + 1 < n else 0
        sx = vx[k2] - cx
        sy = vy[k2] - cy
        denom = rx * sy - ry * sx
        qpx = cx - ax
        qpy = cy - ay
        un = qpx * ry - qpy * rx
        if abs(denom) > 1e-12:
            t = (qpx * sy - qpy * sx) / denom
            u = un / denom
            if -slack <= t <= 1.0 + slack and -slack <= u <= 1.0 + slack:
                return True
        elif abs(un) <= 1e-9:
            return True
    return False


@njit(cache=True)
def _clip_inside(px, py, qx, qy, vx, vy, ou0, ou1, tol, min_piece):
    """Inside sub-intervals of segment pq in [0,1]; returns count written."""
    n = vx.shape[0]
    seg_len = np.hypot(qx - px, qy - py)
    if seg_len <= tol:
        if _point_in(px, py, vx, vy, tol):
            ou0[0] = 0.0
            ou1[0] = 1.0
            return 1
        return 0

    rx = qx - px
    ry = qy - py
    ts = np.empty(2 * n + 2, np.float64)
    nt = 0
    ts[nt] = 0.0
    nt += 1
    ts[nt] = 1.0
    nt += 1
    tt = tol / max(seg_len, tol)
    rr2 = rx * rx + ry * ry
    for k in range(n):
        c1x = vx[k]
        c1y = vy[k]
        k2 = k + 1 if k + 1 < n else 0
        sx = vx[k2] - c1x
        sy = vy[k2] - c1y
        qpx = c1x - px
        qpy = c1y - py
        denom = rx * sy - ry * sx
        cross_qp_r = qpx * ry - qpy * rx
        if abs(denom) > tol:
            t = (qpx * sy - qpy * sx) / denom
            u = cross_qp_r / denom
            elen = np.hypot(sx, sy)
            tu = tol / max(elen, tol)
            if -tt <= t <= 1.0 + tt and -tu <= u <= 1.0 + tu:
                ts[nt] = min(max(t, 0.0), 1.0)
                nt += 1
        elif abs(cross_qp_r) <= tol:
            t0c = (qpx * rx + qpy * ry) / rr2
            t1c = t0c + (sx * rx + sy * ry) / rr2
            lo = min(t0c, t1c)
            hi = max(t0c, t1c)
            if max(lo, 0.0) <= min(hi, 1.0) + tol:
                ts[nt] = min(max(lo, 0.0), 1.0)
                nt += 1
                ts[nt] = min(max(hi, 0.0), 1.0)
                nt += 1
    cuts = np.sort(ts[:nt])

    # Spans with positive width between distinct cuts.
    st0 = np.empty(nt, np.float64)
    st1 = np.empty(nt, np.float64)
    flags = np.empty(nt, np.bool_)
    ns = 0
    for j in range(nt - 1):
        if cuts[j + 1] - cuts[j] > 0.0:
            st0[ns] = cuts[j]
            st1[ns] = cuts[j + 1]
            ns += 1
    if ns == 0:
        if _point_in(px, py, vx, vy, tol):
            ou0[0] = 0.0
            ou1[0] = 1.0
            return 1
        return 0
    # Classify by midpoint, merging equal-flag neighbors.
    np_ = 0
    for j in range(ns):
        tm = (st0[j] + st1[j]) / 2.0
        f = _point_in(px + tm * rx, py + tm * ry, vx, vy, tol)
        if np_ > 0 and flags[np_ - 1] == f:
            st1[np_ - 1] = st1[j]
        else:
            st0[np_] = st0[j]
            st1[np_] = st1[j]
            flags[np_] = f
            np_ += 1
    # Absorb sub-threshold pieces into a neighbor, then re-merge.
    min_t = min_piece / seg_len
    while np_ > 1:
        idx = -1
        for j in range(np_):
            if st1[j] - st0[j] < min_t:
                idx = j
                break
        if idx < 0:
            break
        if idx > 0:
            st1[idx - 1] = st1[idx]
            shift_from = idx
        else:
            st0[1] = st0[0]
            shift_from = 0
        for j in range(shift_from, np_ - 1):
            st0[j] = st0[j + 1]
            st1[j] = st1[j + 1]
            flags[j] = flags[j + 1]
        np_ -= 1
        # Re-merge neighbors that now share a flag.
        w = 0
        for j in range(1, np_):
            if flags[w] == flags[j]:
                st1[w] = st1[j]
            else:
                w += 1
                st0[w] = st0[j]
                st1[w] = st1[j]
                flags[w] = flags[j]
        np_ = w + 1
    cnt = 0
    for j in range(np_):
        if flags[j]:
            ou0[cnt] = st0[j]
            ou1[cnt] = st1[j]
            cnt += 1
    return cnt


@njit(cache=True)
def resolve_batch(p0l, p1l, cr, sr, tx, ty, vx, vy, bx0, by0, bx1, by1):
    """Classify fragments (rows of p0l->p1l, in the source frame, mapped by
    the rigid transform (cr, sr, tx, ty)) against polygon (vx, vy). Returns
    (frag indices, u0, u1, count): the inside sub-intervals of each fragment,
    in fragment order.
    """
    n = p0l.shape[0]
    p0 = np.empty((n, 2), np.float64)
    p1 = np.empty((n, 2), np.float64)
    for i in range(n):
        p0[i, 0] = cr * p0l[i, 0] - sr * p0l[i, 1] + tx
        p0[i, 1] = sr * p0l[i, 0] + cr * p0l[i, 1] + ty
        p1[i, 0] = cr * p1l[i, 0] - sr * p1l[i, 1] + tx
        p1[i, 1] = sr * p1l[i, 0] + cr * p1l[i, 1] + ty
    nv = vx.shape[0]
    cap = 8 * n + 2 * nv + 16
    oi = np.empty(cap, np.int64)
    ou0 = np.empty(cap, np.float64)
    ou1 = np.empty(cap, np.float64)
    tmp0 = np.empty(2 * nv + 2, np.float64)
    tmp1 = np.empty(2 * nv + 2, np.float64)
    m = 0
    tol = GEOM_EPS
    for i in range(n):
        ax = p0[i, 0]
        ay = p0[i, 1]
        bx = p1[i, 0]
        by = p1[i, 1]
        if (
            max(ax, bx) < bx0
            or max(ay, by) < by0
            or min(ax, bx) > bx1
            or min(ay, by) > by1
        ):
            continue
        if not _seg_crosses(ax, ay, bx, by, vx, vy):
            if _point_in(ax, ay, vx, vy, tol) and _point_in(bx, by, vx, vy, tol):
                if m >= cap:
                    break
                oi[m] = i
                ou0[m] = 0.0
                ou1[m] = 1.0
                m += 1
            continue
        cnt = _clip_inside(ax, ay, bx, by, vx, vy, tmp0, tmp1, tol, MIN_PIECE_LEN)
        for j in range(cnt):
            if m >= cap:
                break
            oi[m] = i
            ou0[m] = tmp0[j]
            ou1[m] = tmp1[j]
            m += 1
    return oi, ou0, ou1, m


@njit(cache=True)
def cast_rays(occ, cs, ox, oy, theta, rel, max_range):
    """DDA ray casting over a boolean occupancy grid (True = occupied).

    Same cell-walk as environment._trace_ray. Returns (hits, depths,
    visited) where visited marks every traversed free cell (including the
    origin cell).
    """
    n = rel.shape[0]
    hits = np.zeros(n, np.bool_)
    depths = np.empty(n, np.float64)
    h, w = occ.shape
    vis = np.zeros((h, w), np.bool_)
    col0 = int(np.floor(ox / cs))
    row0 = int(np.floor(oy / cs))
    if 0 <= row0 < h and 0 <= col0 < w:
        vis[row0, col0] = True
    for i in range(n):
        ang = theta + rel[i]
        dx = np.cos(ang)
        dy = np.sin(ang)
        col = col0
        row = row0
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            t_dx = abs(cs / dx)
            nx = (col + (1 if dx > 0 else 0)) * cs
            t_max_x = (nx - ox) / dx
        else:
            t_dx = np.inf
            t_max_x = np.inf
        if dy != 0.0:
            t_dy = abs(cs / dy)
            ny = (row + (1 if dy > 0 else 0)) * cs
            t_max_y = (ny - oy) / dy
        else:
            t_dy = np.inf
            t_max_y = np.inf
        hit = False
        depth = max_range
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_dx
                col += step_x
            else:
                t = t_max_y
                t_max_y += t_dy
                row += step_y
            if t >= max_range:
                break
            if row < 0 or row >= h or col < 0 or col >= w or occ[row, col]:
                hit = True
                depth = t
                break
            vis[row, col] = True
        hits[i] = hit
        depths[i] = depth
    return hits, depths, vis


@njit(cache=True)
def scope_dijkstra(head, nxt, eto, ew, erth, erx, ery, source, radius, nv):
    """Dijkstra over the half-edge adjacency, composing the transform
    T_{source <- v} along each shortest path. Ties break toward the smaller
    vertex id. Returns (ids ascending, theta, x, y) over settled vertices.
    """
    INF = 1e30
    TWO_PI = 2.0 * np.pi
    dist = np.full(nv, INF)
    thv = np.zeros(nv)
    xv = np.zeros(nv)
    yv = np.zeros(nv)
    settled = np.zeros(nv, np.bool_)

    ne = eto.shape[0]
    cap = ne + 1
    hd = np.empty(cap)
    hv = np.empty(cap, np.int64)
    hn = 0

    dist[source] = 0.0
    hd[0] = 0.0
    hv[0] = source
    hn = 1
    count = 0
    while hn > 0:
        d = hd[0]
        u = hv[0]
        hn -= 1
        # sift down the last element
        cd = hd[hn]
        cv = hv[hn]
        i = 0
        while True:
            l = 2 * i + 1
            if l >= hn:
                break
            r = l + 1
            m = l
            if r < hn and (hd[r] < hd[l] or (hd[r] == hd[l] and hv[r] < hv[l])):
                m = r
            if hd[m] < cd or (hd[m] == cd and hv[m] < cv):
                hd[i] = hd[m]
                hv[i] = hv[m]
                i = m
            else:
                break
        hd[i] = cd
        hv[i] = cv
        if settled[u]:
            continue
        settled[u] = True
        count += 1
        tu = thv[u]
        cu = np.cos(tu)
        su = np.sin(tu)
        xu = xv[u]
        yu = yv[u]
        e = head[u]
        while e != -1:
            v = eto[e]
            if not settled[v]:
                nd = d + ew[e]
                if nd <= radius and nd < dist[v]:
                    dist[v] = nd
                    t = tu + erth[e]
                    t = t - TWO_PI * np.rint(t / TWO_PI)
                    thv[v] = t
                    xv[v] = xu + cu * erx[e] - su * ery[e]
                    yv[v] = yu + su * erx[e] + cu * ery[e]
                    # sift up
                    i = hn
                    while i > 0:
                        p = (i - 1) >> 1
                        if hd[p] > nd or (hd[p] == nd and hv[p] > v):
                            hd[i] = hd[p]
                            hv[i] = hv[p]
                            i = p
                        else:
                            break
                    hd[i] = nd
                    hv[i] = v
                    hn += 1
            e = nxt[e]
    ids = np.empty(count, np.int64)
    oth = np.empty(count)
    ox = np.empty(count)
    oy = np.empty(count)
    k = 0
    for v in range(nv):
        if settled[v]:
            ids[k] = v
            oth[k] = thv[v]
            ox[k] = xv[v]
            oy[k] = yv[v]
            k += 1
    return ids, oth, ox, oy
