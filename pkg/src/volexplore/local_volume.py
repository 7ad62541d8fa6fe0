"""Labeled free-space polygon observed from a single pose.

The polygon lives in the robot frame of its scan (robot at the origin,
heading +x) and never leaves it; consolidation transforms copies of it
temporarily. Each polygon edge carries an ordered partition of labeled
sub-segments, parametrized by t in [0, 1] along the edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .environment import DepthScan
from .geom2d import MIN_PIECE_LEN, Segment, polygon_edges


class EdgeLabel(Enum):
    OBSTACLE = "obstacle"
    FRONTIER = "frontier"
    FREE = "free"


@dataclass
class LabeledSpan:
    t0: float
    t1: float
    label: EdgeLabel


def scan_polygon_vertices(scan: DepthScan) -> np.ndarray:
    """Polygon spanned by the sensor rays: origin followed by the sample
    endpoints in angular order (robot frame)."""
    return np.vstack([[0.0, 0.0], scan.local_points()])


class LocalVolume:
    def __init__(self, verts: np.ndarray, edge_spans: list[list[LabeledSpan]]):
        if len(edge_spans) != len(verts):
            raise ValueError("one span list per polygon edge required")
        self.verts = np.asarray(verts, dtype=float)
        self.verts.setflags(write=False)
        self.edge_spans = edge_spans
        self._edge_lens = None
        self._radius = float(np.hypot(self.verts[:, 0], self.verts[:, 1]).max())
        bb = self.verts
        self.bbox = (
            float(bb[:, 0].min()),
            float(bb[:, 1].min()),
            float(bb[:, 0].max()),
            float(bb[:, 1].max()),
        )
        # Bumped on every relabel; consolidation uses it to skip stale pairs.
        self.version = 0
        self._front_cache_version = -1
        self._front_frags: list[tuple[int, float, float]] = []
        self._front_p0 = np.empty((0, 2))
        self._front_p1 = np.empty((0, 2))
        self._front_lens = np.empty(0)
        self._front_bbox: tuple[float, float, float, float] | None = None
        self._edge_cache = None

    def edge_cache(self):
        """polygon_edges(verts), computed once (the polygon never changes)."""
        if self._edge_cache is None:
            self._edge_cache = polygon_edges(self.verts)
        return self._edge_cache

    @property
    def n_edges(self) -> int:
        return len(self.verts)

    @property
    def radius(self) -> float:
        """Max vertex distance from the volume's own origin."""
        return self._radius

    def edge_points(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.verts[i], self.verts[(i + 1) % len(self.verts)]

    def edge_length(self, i: int) -> float:
        if self._edge_lens is None:
            d = np.roll(self.verts, -1, axis=0) - self.verts
            self._edge_lens = np.hypot(d[:, 0], d[:, 1])
        return float(self._edge_lens[i])

    def fragments(self, label: EdgeLabel):
        """All (edge_idx, t0, t1) spans with the given label."""
        if label is EdgeLabel.FRONTIER:
            self._refresh_frontier_cache()
            return self._front_frags
        out = []
        for i, spans in enumerate(self.edge_spans):
            for s in spans:
                if s.label is label:
                    out.append((i, s.t0, s.t1))
        return out

    def _refresh_frontier_cache(self) -> None:
        if self._front_cache_version == self.version:
            return
        frags = []
        for i, spans in enumerate(self.edge_spans):
            for s in spans:
                if s.label is EdgeLabel.FRONTIER:
                    frags.append((i, s.t0, s.t1))
        self._front_frags = frags
        n = len(self.verts)
        if frags:
            idx = np.array([f[0] for f in frags])
            t0 = np.array([f[1] for f in frags])
            t1 = np.array([f[2] for f in frags])
            a = self.verts[idx]
            b = self.verts[(idx + 1) % n]
            self._front_p0 = a + t0[:, None] * (b - a)
            self._front_p1 = a + t1[:, None] * (b - a)
            d = self._front_p1 - self._front_p0
            self._front_lens = np.hypot(d[:, 0], d[:, 1])
            lo = np.minimum(self._front_p0, self._front_p1).min(axis=0)
            hi = np.maximum(self._front_p0, self._front_p1).max(axis=0)
            self._front_bbox = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
        else:
            self._front_p0 = np.empty((0, 2))
            self._front_p1 = np.empty((0, 2))
            self._front_lens = np.empty(0)
            self._front_bbox = None
        self._front_cache_version = self.version

    def frontier_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Frontier fragment endpoints (local frame) as two Nx2 arrays."""
        self._refresh_frontier_cache()
        return self._front_p0, self._front_p1

    def frontier_bbox(self) -> tuple[float, float, float, float] | None:
        """Axis-aligned bounds of all frontier fragments (local frame);
        None when the volume has no frontiers left."""
        self._refresh_frontier_cache()
        return self._front_bbox

    def frontier_fragments(self) -> list[Segment]:
        """Frontier sub-segments as geometry in the local frame."""
        p0, p1 = self.frontier_endpoints()
        return [
            Segment((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
            for a, b in zip(p0, p1)
        ]

    def significant_frontier_fragments(self, min_len: float):
        """Frontier (edge_idx, t0, t1) spans longer than min_len."""
        self._refresh_frontier_cache()
        return [
            f for f, ln in zip(self._front_frags, self._front_lens) if ln > min_len
        ]

    def has_frontiers(self, min_len: float = 0.0) -> bool:
        self._refresh_frontier_cache()
        if not self._front_frags:
            return False
        if min_len <= 0.0:
            return True
        return bool((self._front_lens > min_len).any())

    def frontier_length(self) -> float:
        self._refresh_frontier_cache()
        return float(self._front_lens.sum())

    def relabel_free(self, edge_idx: int, t0: float, t1: float) -> int:
        """Mark the FRONTIER portion of edge interval [t0, t1] as FREE.

        Sub-MIN_PIECE_LEN residue keeps the frontier label (conservative).
        Returns the number of spans relabeled.
        """
        elen = self.edge_length(edge_idx)
        min_t = MIN_PIECE_LEN / max(elen, MIN_PIECE_LEN)
        spans = self.edge_spans[edge_idx]
        out = []
        count = 0
        for s in spans:
            if s.label is not EdgeLabel.FRONTIER or s.t1 <= t0 or s.t0 >= t1:
                out.append(s)
                continue
            lo = max(s.t0, t0)
            hi = min(s.t1, t1)
            if hi - lo < min_t:
                out.append(s)
                continue
            # Leading frontier remainder.
            if lo - s.t0 >= min_t:
                out.append(LabeledSpan(s.t0, lo, EdgeLabel.FRONTIER))
            else:
                lo = s.t0
            if s.t1 - hi >= min_t:
                out.append(LabeledSpan(lo, hi, EdgeLabel.FREE))
                out.append(LabeledSpan(hi, s.t1, EdgeLabel.FRONTIER))
            else:
                out.append(LabeledSpan(lo, s.t1, EdgeLabel.FREE))
            count += 1
        if count:
            # Merge adjacent spans sharing a label.
            merged = [out[0]]
            for s in out[1:]:
                if s.label is merged[-1].label:
                    merged[-1] = LabeledSpan(merged[-1].t0, s.t1, s.label)
                else:
                    merged.append(s)
            self.edge_spans[edge_idx] = merged
            self.version += 1
        return count


def build_local_volume(scan: DepthScan, delta: float) -> LocalVolume:
    """Construct the labeled FOV polygon from a depth scan.

    An edge between adjacent samples is an obstacle edge iff both rays hit
    and their depths differ by less than delta (the occlusion threshold);
    every other edge, including the two touching the origin, is a frontier.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    verts = scan_polygon_vertices(scan)
    n = len(verts)
    spans = []
    for i in range(n):
        if i == 0 or i == n - 1:
            label = EdgeLabel.FRONTIER  # edges adjacent to the robot position
        else:
            a, b = i - 1, i  # samples bounding edge verts[i] -> verts[i+1]
            if (
                scan.hits[a]
                and scan.hits[b]
                and abs(scan.depths[a] - scan.depths[b]) < delta
            ):
                label = EdgeLabel.OBSTACLE
            else:
                label = EdgeLabel.FRONTIER
        spans.append([LabeledSpan(0.0, 1.0, label)])
    return LocalVolume(verts, spans)
