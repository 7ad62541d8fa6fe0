"""Planar rigid transforms, polygons and the predicates the mapper needs.

Conventions: angles in radians normalized to (-pi, pi], lengths in meters.
All polygons are counter-clockwise and implicitly closed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Geometric tolerance (point-on-boundary, intersection coincidence).
GEOM_EPS = 1e-9
# Segment pieces shorter than this are merged into a neighbor when clipping.
MIN_PIECE_LEN = 1e-6

Point = tuple[float, float]


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(theta, math.tau)
    if r <= -math.pi:
        r = math.pi
    return r


@dataclass(frozen=True)
class Pose2:
    """SE(2) rigid transform: rotation by theta followed by translation (x, y)."""

    theta: float = 0.0
    x: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.theta + other.theta,
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
        )

    def invert(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-self.theta, -(c * self.x + s * self.y), -(-s * self.x + c * self.y))

    def apply(self, pt) -> Point:
        c, s = math.cos(self.theta), math.sin(self.theta)
        px, py = pt
        return (self.x + c * px - s * py, self.y + s * px + c * py)

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array of points."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts, dtype=float)
        out[:, 0] = self.x + c * pts[:, 0] - s * pts[:, 1]
        out[:, 1] = self.y + s * pts[:, 0] + c * pts[:, 1]
        return out

    @property
    def translation_norm(self) -> float:
        return math.hypot(self.x, self.y)

    def almost_equal(self, other: "Pose2", tol: float = 1e-9) -> bool:
        return (
            abs(wrap_angle(self.theta - other.theta)) <= tol
            and abs(self.x - other.x) <= tol
            and abs(self.y - other.y) <= tol
        )


IDENTITY = Pose2()


@dataclass(frozen=True)
class Segment:
    a: Point
    b: Point

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("degenerate segment")

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    def midpoint(self) -> Point:
        return ((self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0)


class Polygon:
    """Simple CCW polygon stored as an (N, 2) float array."""

    def __init__(self, vertices):
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ValueError("polygon needs at least 3 2D vertices")
        d = verts - np.roll(verts, -1, axis=0)
        if np.any(np.hypot(d[:, 0], d[:, 1]) <= GEOM_EPS):
            raise ValueError("consecutive polygon vertices coincide")
        self.verts = verts
        self.verts.setflags(write=False)

    def __len__(self):
        return len(self.verts)

    @property
    def bbox(self):
        return (
            self.verts[:, 0].min(),
            self.verts[:, 1].min(),
            self.verts[:, 0].max(),
            self.verts[:, 1].max(),
        )

    def signed_area(self) -> float:
        x, y = self.verts[:, 0], self.verts[:, 1]
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        return 0.5 * float(np.sum(x * y2 - x2 * y))


def polygon_edges(verts: np.ndarray):
    """Precomputed edge arrays for repeated queries against one polygon:
    (x1, y1, x2, y2, ex, ey, ww) with e = edge vector and ww = |e|^2."""
    x1 = verts[:, 0]
    y1 = verts[:, 1]
    x2 = np.concatenate((x1[1:], x1[:1]))
    y2 = np.concatenate((y1[1:], y1[:1]))
    ex = x2 - x1
    ey = y2 - y1
    return (x1, y1, x2, y2, ex, ey, ex * ex + ey * ey)


def points_in_polygon(
    points: np.ndarray, verts: np.ndarray, tol: float = GEOM_EPS, edges=None
) -> np.ndarray:
    """Vectorized containment test; boundary points (within tol) count as inside.

    points: (M, 2), verts: (N, 2). Returns bool (M,). `edges` may carry
    polygon_edges(verts) to amortize repeated queries.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    if edges is None:
        edges = polygon_edges(verts)
    x1, y1, x2, y2, ex, ey, ww = (a[None, :] for a in edges)

    # Crossing number (half-open rule keeps vertices from double-counting).
    cond = (y1 > py) != (y2 > py)
    xint = np.divide(
        (py - y1) * ex, ey, out=np.zeros(np.broadcast_shapes(py.shape, ey.shape)), where=cond
    )
    crossing = cond & (px < x1 + xint)
    inside = (crossing.sum(axis=1) % 2).astype(bool)

    # Boundary check: distance from point to each edge.
    t = ((px - x1) * ex + (py - y1) * ey) / ww
    t = np.clip(t, 0.0, 1.0)
    dx = px - (x1 + t * ex)
    dy = py - (y1 + t * ey)
    on_edge = (dx * dx + dy * dy) <= tol * tol
    return inside | on_edge.any(axis=1)


def point_in_polygon(pt, poly, tol: float = GEOM_EPS) -> bool:
    verts = poly.verts if isinstance(poly, Polygon) else np.asarray(poly, dtype=float)
    return bool(points_in_polygon(np.asarray([pt], dtype=float), verts, tol)[0])


def segment_intersection(a: Point, b: Point, c: Point, d: Point, tol: float = GEOM_EPS):
    """Intersection of segments ab and cd.

    Returns [] if disjoint, [p] for a single point (crossing or endpoint touch)
    and [p, q] for a collinear overlap (its endpoints).
    """
    ax, ay = a
    bx, by = b
    cx, cy = c
    dx, dy = d
    rx, ry = bx - ax, by - ay
    sx, sy = dx - cx, dy - cy
    denom = rx * sy - ry * sx
    qpx, qpy = cx - ax, cy - ay
    cross_qp_r = qpx * ry - qpy * rx

    if abs(denom) <= tol:
        if abs(cross_qp_r) > tol:
            return []
        # Collinear: project cd onto ab's parameter space.
        rr = rx * rx + ry * ry
        t0 = (qpx * rx + qpy * ry) / rr
        t1 = t0 + (sx * rx + sy * ry) / rr
        lo, hi = min(t0, t1), max(t0, t1)
        lo, hi = max(lo, 0.0), min(hi, 1.0)
        if lo > hi + tol:
            return []
        p0 = (ax + lo * rx, ay + lo * ry)
        p1 = (ax + hi * rx, ay + hi * ry)
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) <= tol:
            return [p0]
        return [p0, p1]

    t = (qpx * sy - qpy * sx) / denom
    u = cross_qp_r / denom
    # Tolerances scaled to segment lengths so endpoint touches register.
    tt = tol / max(math.hypot(rx, ry), tol)
    tu = tol / max(math.hypot(sx, sy), tol)
    if -tt <= t <= 1.0 + tt and -tu <= u <= 1.0 + tu:
        t = min(max(t, 0.0), 1.0)
        return [(ax + t * rx, ay + t * ry)]
    return []


def clip_intervals(p: Point, q: Point, verts: np.ndarray, edges=None):
    """Partition segment pq against a polygon.

    Returns [(t0, t1, inside)] ordered from p to q, pieces shorter than
    MIN_PIECE_LEN merged into a neighbor. Boundary counts as inside.
    """
    px, py = p
    qx, qy = q
    seg_len = math.hypot(qx - px, qy - py)
    if seg_len <= GEOM_EPS:
        return [(0.0, 1.0, point_in_polygon(p, verts))]

    ts = {0.0, 1.0}
    rx = qx - px
    ry = qy - py
    if edges is None:
        edges = polygon_edges(verts)
    c1x, c1y, _, _, sx, sy, _ = edges
    qpx = c1x - px
    qpy = c1y - py
    denom = rx * sy - ry * sx
    cross_qp_r = qpx * ry - qpy * rx
    tol = GEOM_EPS
    nonpar = np.abs(denom) > tol
    out = np.zeros_like(denom)
    t = np.divide(qpx * sy - qpy * sx, denom, out=out, where=nonpar)
    u = np.divide(cross_qp_r, denom, out=out.copy(), where=nonpar)
    # Tolerances scaled to segment lengths so endpoint touches register.
    tt = tol / max(seg_len, tol)
    elen = np.hypot(sx, sy)
    tu = tol / np.maximum(elen, tol)
    hit = nonpar & (t >= -tt) & (t <= 1.0 + tt) & (u >= -tu) & (u <= 1.0 + tu)
    for ti in t[hit]:
        ts.add(min(max(float(ti), 0.0), 1.0))
    # Collinear overlapping edges contribute their projected endpoints.
    collinear = (~nonpar) & (np.abs(cross_qp_r) <= tol)
    if collinear.any():
        rr2 = rx * rx + ry * ry
        t0c = (qpx[collinear] * rx + qpy[collinear] * ry) / rr2
        t1c = t0c + (sx[collinear] * rx + sy[collinear] * ry) / rr2
        lo = np.minimum(t0c, t1c)
        hi = np.maximum(t0c, t1c)
        keep = (np.maximum(lo, 0.0) <= np.minimum(hi, 1.0) + tol)
        for v in np.concatenate((lo[keep], hi[keep])):
            ts.add(min(max(float(v), 0.0), 1.0))
    cuts = sorted(ts)

    # Classify pieces by midpoint; merge same-flag neighbors.
    spans = [(t0, t1) for t0, t1 in zip(cuts[:-1], cuts[1:]) if t1 - t0 > 0.0]
    if not spans:
        return [(0.0, 1.0, point_in_polygon(p, verts))]
    mids = np.array([(px + (t0 + t1) / 2.0 * rx, py + (t0 + t1) / 2.0 * ry) for t0, t1 in spans])
    flags = points_in_polygon(mids, verts, edges=edges)
    pieces = []
    for (t0, t1), flag in zip(spans, flags):
        flag = bool(flag)
        if pieces and pieces[-1][2] == flag:
            pieces[-1] = (pieces[-1][0], t1, flag)
        else:
            pieces.append((t0, t1, flag))

    # Absorb sub-threshold pieces into a neighbor.
    min_t = MIN_PIECE_LEN / seg_len
    while len(pieces) > 1:
        idx = next((i for i, (t0, t1, _) in enumerate(pieces) if t1 - t0 < min_t), None)
        if idx is None:
            break
        t0, t1, _ = pieces.pop(idx)
        if idx > 0:
            pt0, pt1, pf = pieces[idx - 1]
            pieces[idx - 1] = (pt0, t1, pf)
        else:
            nt0, nt1, nf = pieces[idx]
            pieces[idx] = (t0, nt1, nf)
        # Re-merge neighbors that now share a flag.
        merged = [pieces[0]]
        for t0_, t1_, f_ in pieces[1:]:
            if merged[-1][2] == f_:
                merged[-1] = (merged[-1][0], t1_, f_)
            else:
                merged.append((t0_, t1_, f_))
        pieces = merged
    return pieces


def clip_segment_by_polygon(seg: Segment, poly) -> list[tuple[Segment, bool]]:
    """Split a segment into maximal pieces inside/outside a polygon."""
    verts = poly.verts if isinstance(poly, Polygon) else np.asarray(poly, dtype=float)
    px, py = seg.a
    qx, qy = seg.b
    out = []
    for t0, t1, flag in clip_intervals(seg.a, seg.b, verts):
        a = (px + t0 * (qx - px), py + t0 * (qy - py))
        b = (px + t1 * (qx - px), py + t1 * (qy - py))
        out.append((Segment(a, b), flag))
    return out


def segments_cross_edges(
    p0: np.ndarray, p1: np.ndarray, verts: np.ndarray, edges=None
) -> np.ndarray:
    """For M segments (p0[i] -> p1[i]), report whether each one touches any
    polygon edge. Inclusive of endpoint touches, so a True only means the
    segment needs the exact clipping path. Returns bool (M,)."""
    ax = p0[:, 0][:, None]
    ay = p0[:, 1][:, None]
    bx = p1[:, 0][:, None]
    by = p1[:, 1][:, None]
    if edges is None:
        edges = polygon_edges(verts)
    cx, cy, _, _, sx, sy, _ = (a[None, :] for a in edges)

    rx, ry = bx - ax, by - ay
    denom = rx * sy - ry * sx
    qpx, qpy = cx - ax, cy - ay
    tn = qpx * sy - qpy * sx
    un = qpx * ry - qpy * rx
    eps = 1e-12
    nonpar = np.abs(denom) > eps
    out = np.zeros_like(denom)
    t = np.divide(tn, denom, out=out, where=nonpar)
    u = np.divide(un, denom, out=out.copy(), where=nonpar)
    slack = 1e-9
    crossing = nonpar & (t >= -slack) & (t <= 1 + slack) & (u >= -slack) & (u <= 1 + slack)
    # Collinear overlaps (parallel with zero cross product) are rare; flag
    # them for exact handling too.
    collinear = (~nonpar) & (np.abs(un) <= 1e-9)
    return (crossing | collinear).any(axis=1)
