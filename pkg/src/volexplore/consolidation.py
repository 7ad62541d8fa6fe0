"""Scoped pairwise frontier consolidation.

For every new measurement, all volumes within the consolidation scope are
temporarily expressed in the frame of the new measurement; any frontier
sub-segment of one volume that lies inside another volume (boundary counts
as inside) is relabeled free, subdividing partially-inside fragments.
Relabeling persists in each volume's own frame; the temporary transforms
are discarded.
"""
from __future__ import annotations

import math

import numpy as np

from .geom2d import clip_intervals, points_in_polygon, segments_cross_edges, wrap_angle
from .local_volume import EdgeLabel, LocalVolume
from .pose_graph import PoseGraph

try:  # Compiled kernel; the numpy path below stays as reference/fallback.
    from ._fastgeom import resolve_batch as _resolve_batch
except Exception:  # pragma: no cover - exercised only without numba
    _resolve_batch = None

def _world_bbox(cs: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """Axis-aligned bounds of rigidly transformed boxes.

    cs: (N, 4) rows (cos, sin, tx, ty); lb: (N, 4) local (x0, y0, x1, y1).
    """
    cxs = np.stack([lb[:, 0], lb[:, 2], lb[:, 2], lb[:, 0]], axis=1)
    cys = np.stack([lb[:, 1], lb[:, 1], lb[:, 3], lb[:, 3]], axis=1)
    wx = cs[:, 0:1] * cxs - cs[:, 1:2] * cys + cs[:, 2:3]
    wy = cs[:, 1:2] * cxs + cs[:, 0:1] * cys + cs[:, 3:4]
    return np.stack(
        [wx.min(axis=1), wy.min(axis=1), wx.max(axis=1), wy.max(axis=1)], axis=1
    )


def _boxes_touch(src_box, dst_box, cr, sr, tx, ty, eps: float = 1e-9) -> bool:
    """Whether src_box, mapped by (cr, sr, tx, ty), can overlap dst_box."""
    if src_box is None:
        return False
    x0, y0, x1, y1 = src_box
    xs = (x0, x1, x1, x0)
    ys = (y0, y0, y1, y1)
    wx = [cr * x - sr * y + tx for x, y in zip(xs, ys)]
    wy = [sr * x + cr * y + ty for x, y in zip(xs, ys)]
    return (
        min(wx) <= dst_box[2] + eps
        and max(wx) >= dst_box[0] - eps
        and min(wy) <= dst_box[3] + eps
        and max(wy) >= dst_box[1] - eps
    )


class Consolidator:
    """Runs consolidation passes over a pose graph.

    Keeps a memo of (volume versions, relative transform) per pair so
    unchanged pairs are not re-clipped every step. The memo is purely an
    optimization: outcomes depend only on geometry.
    """

    def __init__(self, graph: PoseGraph):
        self.graph = graph
        self._memo: dict[tuple[int, int], tuple] = {}
        # Per-vertex caches for consolidate_new: polygon bbox and radius are
        # immutable; the frontier bbox is refreshed on version change.
        self._rad = np.empty(0)
        self._pb = np.empty((0, 4))
        self._fb = np.zeros((0, 4))
        self._hasf = np.zeros(0, dtype=bool)
        self._fbver = np.empty(0, dtype=np.int64)
        self._n_init = 0

    def _sync_caches(self, ids) -> None:
        verts = self.graph.vertices
        nv = len(verts)
        if nv > self._rad.shape[0]:
            old = self._rad.shape[0]
            cap = max(2 * old, nv, 64)
            self._rad = np.concatenate([self._rad, np.zeros(cap - old)])
            self._pb = np.concatenate([self._pb, np.zeros((cap - old, 4))])
            self._fb = np.concatenate([self._fb, np.zeros((cap - old, 4))])
            self._hasf = np.concatenate([self._hasf, np.zeros(cap - old, dtype=bool)])
            self._fbver = np.concatenate([self._fbver, np.full(cap - old, -1)])
        while self._n_init < nv:
            v = verts[self._n_init].volume
            self._rad[self._n_init] = v.radius
            self._pb[self._n_init] = v.bbox
            self._n_init += 1
        for vid in ids:
            v = verts[vid].volume
            if self._fbver[vid] != v.version:
                box = v.frontier_bbox()
                if box is None:
                    self._hasf[vid] = False
                    self._fb[vid] = 0.0
                else:
                    self._hasf[vid] = True
                    self._fb[vid] = box
                self._fbver[vid] = v.version

    def consolidate_new(self, center: int, radius: float) -> int:
        """Consolidation pass for a freshly inserted measurement: only pairs
        involving the center. Pairs of older volumes were already resolved
        when the younger of the two was inserted, and relabeling only ever
        shrinks frontiers, so re-clipping them cannot produce new labels.
        """
        ids, _, atx, aty, aca, asa = self.graph.scope_transforms(center, radius)
        keep = [k for k, vid in enumerate(ids) if vid != center]
        if not keep:
            return 0
        self._sync_caches(ids)
        cvol = self.graph.vertices[center].volume
        tx = atx[keep]
        ty = aty[keep]
        ca = aca[keep]
        sa = asa[keep]
        vids = np.asarray(ids)[keep]
        rad = self._rad[vids]
        pb = self._pb[vids]
        fb = self._fb[vids]
        has_f = self._hasf[vids]
        near = tx * tx + ty * ty <= (rad + cvol.radius) ** 2
        eps = 1e-9
        # T_{v <- center} is the inverse of the scope transform T_{center <- v}.
        irx = -(ca * tx + sa * ty)
        iry = -(-sa * tx + ca * ty)
        cfb = cvol.frontier_bbox()
        if cfb is not None:
            # Center's frontiers against each older polygon, in v's frame.
            cs1 = np.stack([ca, -sa, irx, iry], axis=1)
            w1 = _world_bbox(cs1, np.broadcast_to(np.asarray(cfb, dtype=float), (len(keep), 4)))
            d1 = (
                near
                & (w1[:, 0] <= pb[:, 2] + eps)
                & (w1[:, 2] >= pb[:, 0] - eps)
                & (w1[:, 1] <= pb[:, 3] + eps)
                & (w1[:, 3] >= pb[:, 1] - eps)
            )
        else:
            d1 = np.zeros(len(keep), dtype=bool)
        # Each older volume's frontiers against the center polygon.
        cs2 = np.stack([ca, sa, tx, ty], axis=1)
        w2 = _world_bbox(cs2, fb)
        cb = cvol.bbox
        d2 = (
            near
            & has_f
            & (w2[:, 0] <= cb[2] + eps)
            & (w2[:, 2] >= cb[0] - eps)
            & (w2[:, 1] <= cb[3] + eps)
            & (w2[:, 3] >= cb[1] - eps)
        )
        relabels = 0
        verts = self.graph.vertices
        for k in np.nonzero(d1 | d2)[0]:
            vol = verts[vids[k]].volume
            if d1[k]:
                relabels += self._resolve(cvol, vol, ca[k], -sa[k], irx[k], iry[k])
            if d2[k]:
                relabels += self._resolve(vol, cvol, ca[k], sa[k], tx[k], ty[k])
        return relabels

    def consolidate(self, center: int, radius: float, pairs=None, _scope=None) -> int:
        scope = _scope if _scope is not None else self.graph.consolidation_scope(center, radius)
        vols: dict[int, LocalVolume] = {}
        xfs: dict[int, tuple[float, float, float, float, float]] = {}
        for vid, xf in scope:
            vols[vid] = self.graph.vertices[vid].volume
            xfs[vid] = (xf.theta, math.cos(xf.theta), math.sin(xf.theta), xf.x, xf.y)
        if pairs is None:
            # A pair can only change labels if at least one side still has
            # frontiers, and only where those frontiers could lie inside the
            # other polygon: a vectorized overlap test between the frontier
            # bounds of one side and the polygon bounds of the other (both in
            # the center frame) drops the non-candidates.
            ids = sorted(vols)
            n = len(ids)
            cs = np.empty((n, 4))
            pb = np.empty((n, 4))  # polygon bbox, local frame
            fb = np.empty((n, 4))  # frontier bbox, local frame (or empty)
            has_front = np.zeros(n, dtype=bool)
            for k, vid in enumerate(ids):
                _, c, s, x, y = xfs[vid]
                cs[k] = (c, s, x, y)
                pb[k] = vols[vid].bbox
                box = vols[vid].frontier_bbox()
                if box is not None:
                    fb[k] = box
                    has_front[k] = True
            wpb = _world_bbox(cs, pb)
            wfb = _world_bbox(cs, fb)
            pos = {vid: k for k, vid in enumerate(ids)}
            ids_arr = np.array(ids)
            pair_set = set()
            eps = 1e-9
            for ka in np.nonzero(has_front)[0]:
                a = ids[ka]
                overlap = (
                    (wpb[:, 0] <= wfb[ka, 2] + eps)
                    & (wpb[:, 2] >= wfb[ka, 0] - eps)
                    & (wpb[:, 1] <= wfb[ka, 3] + eps)
                    & (wpb[:, 3] >= wfb[ka, 1] - eps)
                )
                for b in ids_arr[overlap]:
                    b = int(b)
                    if a != b:
                        pair_set.add((a, b) if a < b else (b, a))
            pairs = sorted(pair_set)
        relabels = 0
        memo = self._memo
        for a, b in pairs:
            va, vb = vols[a], vols[b]
            ta, ca, sa, xa, ya = xfs[a]
            tb, cb, sb, xb, yb = xfs[b]
            # Volumes too far apart in the center frame cannot overlap.
            dx = xb - xa
            dy = yb - ya
            rr = va.radius + vb.radius
            if dx * dx + dy * dy > rr * rr:
                continue
            # T_{a <- b}: b's volume expressed in a's frame.
            rth = wrap_angle(tb - ta)
            rx = ca * dx + sa * dy
            ry = -sa * dx + ca * dy
            key = (a, b)
            sig = (va.version, vb.version, rth, rx, ry)
            if memo.get(key) == sig:
                continue
            cr = math.cos(rth)
            sr = math.sin(rth)
            if _boxes_touch(vb.frontier_bbox(), va.bbox, cr, sr, rx, ry):
                relabels += self._resolve(vb, va, cr, sr, rx, ry)
            # Inverse transform for the opposite direction: R^T, -R^T t.
            ix = -(cr * rx + sr * ry)
            iy = -(-sr * rx + cr * ry)
            if _boxes_touch(va.frontier_bbox(), vb.bbox, cr, -sr, ix, iy):
                relabels += self._resolve(va, vb, cr, -sr, ix, iy)
            memo[key] = (va.version, vb.version, rth, rx, ry)
        return relabels

    @staticmethod
    def _resolve(src: LocalVolume, dst: LocalVolume, cr, sr, tx, ty) -> int:
        """Relabel src's frontier fragments lying inside dst's polygon.

        (cr, sr, tx, ty) is T_{dst <- src} as cos/sin/translation.
        """
        if src._front_cache_version != src.version:
            src._refresh_frontier_cache()
        p0l = src._front_p0
        p1l = src._front_p1
        if p0l.shape[0] == 0:
            return 0
        bx0, by0, bx1, by1 = dst.bbox
        if _resolve_batch is not None:
            dedges = dst.edge_cache()
            oi, ou0, ou1, m = _resolve_batch(
                p0l, p1l, cr, sr, tx, ty, dedges[0], dedges[1], bx0, by0, bx1, by1
            )
            if m == 0:
                return 0
            frags = src._front_frags
            count = 0
            for j in range(m):
                i, t0, t1 = frags[oi[j]]
                u0 = ou0[j]
                u1 = ou1[j]
                if u0 == 0.0 and u1 == 1.0:
                    count += src.relabel_free(i, t0, t1)
                else:
                    count += src.relabel_free(i, t0 + u0 * (t1 - t0), t0 + u1 * (t1 - t0))
            return count

        frags = src.fragments(EdgeLabel.FRONTIER)
        # Map fragment endpoints into dst's frame.
        p0 = np.empty_like(p0l)
        p1 = np.empty_like(p1l)
        p0[:, 0] = cr * p0l[:, 0] - sr * p0l[:, 1] + tx
        p0[:, 1] = sr * p0l[:, 0] + cr * p0l[:, 1] + ty
        p1[:, 0] = cr * p1l[:, 0] - sr * p1l[:, 1] + tx
        p1[:, 1] = sr * p1l[:, 0] + cr * p1l[:, 1] + ty
        out0 = (np.maximum(p0, p1) < [bx0, by0]).any(axis=1)
        out1 = (np.minimum(p0, p1) > [bx1, by1]).any(axis=1)
        candidate = ~(out0 | out1)
        if not candidate.any():
            return 0

        dverts = dst.verts
        dedges = dst.edge_cache()
        idx = np.nonzero(candidate)[0]
        ins = points_in_polygon(np.vstack([p0[idx], p1[idx]]), dverts, edges=dedges)
        ins0, ins1 = ins[: len(idx)], ins[len(idx) :]
        crossing = segments_cross_edges(p0[idx], p1[idx], dverts, edges=dedges)
        count = 0
        for j, k in enumerate(idx):
            i, t0, t1 = frags[k]
            if not crossing[j]:
                if ins0[j] and ins1[j]:
                    count += src.relabel_free(i, t0, t1)
                continue
            # Exact path: clip in dst's frame, map pieces back to edge params.
            for u0, u1, inside in clip_intervals(tuple(p0[k]), tuple(p1[k]), dverts, edges=dedges):
                if not inside:
                    continue
                a0 = t0 + u0 * (t1 - t0)
                a1 = t0 + u1 * (t1 - t0)
                count += src.relabel_free(i, a0, a1)
        return count


def consolidate(graph: PoseGraph, center: int, radius: float) -> int:
    """One-shot consolidation pass (no memo reuse across calls)."""
    return Consolidator(graph).consolidate(center, radius)


def total_frontier_length(graph: PoseGraph) -> float:
    return graph.total_frontier_length()
