"""Topometric backbone: measurement vertices, relative-transform edges,
shortest-path transform integration and consolidation-scope queries.

Edge weights are the norms of estimated translations. Ground-truth poses are
stored on vertices for the simulator only; no query here reads them, and the
naive globally-integrated estimate exists purely for rendering/diagnostics.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geom2d import IDENTITY, Pose2, wrap_angle
from .local_volume import EdgeLabel, LabeledSpan, LocalVolume

try:  # compiled scope query; reference Dijkstra below stays authoritative
    from ._fastgeom import scope_dijkstra as _scope_dijkstra
except Exception:  # pragma: no cover - numba unavailable
    _scope_dijkstra = None


class EdgeKind(Enum):
    ODOMETRY = "odometry"
    PLACE_RECOGNITION = "place_recognition"


@dataclass
class Vertex:
    id: int
    volume: LocalVolume
    true_pose: Pose2
    est_pose_global: Pose2


@dataclass
class GraphEdge:
    a: int
    b: int
    rel: Pose2  # transform T_{a,b}
    kind: EdgeKind

    @property
    def weight(self) -> float:
        return self.rel.translation_norm


class PoseGraph:
    def __init__(self):
        self.vertices: list[Vertex] = []
        self.edges: list[GraphEdge] = []
        self._adj: dict[int, list[tuple[int, Pose2, float]]] = {}
        # Position of the place-recognition edge per vertex pair, so a repeat
        # match replaces the old constraint instead of stacking a new one.
        self._pr_index: dict[tuple[int, int], int] = {}
        # Positions of that edge's two adjacency entries, for in-place update.
        self._pr_adj_pos: dict[tuple[int, int], tuple[int, int]] = {}
        # Flat half-edge adjacency mirroring _adj, for the compiled scope query.
        self._ehead = np.full(64, -1, dtype=np.int64)
        self._enext = np.empty(128, dtype=np.int64)
        self._eto = np.empty(128, dtype=np.int64)
        self._ew = np.empty(128)
        self._erth = np.empty(128)
        self._erx = np.empty(128)
        self._ery = np.empty(128)
        self._ne = 0
        # Half-edge slot pair per place-recognition edge, keyed like _pr_index.
        self._pr_half: dict[tuple[int, int], tuple[int, int]] = {}

    def __len__(self):
        return len(self.vertices)

    def _grow_vertex_slots(self, vid: int):
        if vid >= self._ehead.shape[0]:
            grown = np.full(max(2 * self._ehead.shape[0], vid + 1), -1, dtype=np.int64)
            grown[: self._ehead.shape[0]] = self._ehead
            self._ehead = grown

    def _add_half(self, a: int, b: int, rel: Pose2, w: float) -> int:
        e = self._ne
        if e >= self._eto.shape[0]:
            cap = 2 * self._eto.shape[0]
            for name in ("_enext", "_eto"):
                old = getattr(self, name)
                grown = np.empty(cap, dtype=np.int64)
                grown[:e] = old[:e]
                setattr(self, name, grown)
            for name in ("_ew", "_erth", "_erx", "_ery"):
                old = getattr(self, name)
                grown = np.empty(cap)
                grown[:e] = old[:e]
                setattr(self, name, grown)
        self._eto[e] = b
        self._ew[e] = w
        self._erth[e] = rel.theta
        self._erx[e] = rel.x
        self._ery[e] = rel.y
        self._grow_vertex_slots(max(a, b))
        self._enext[e] = self._ehead[a]
        self._ehead[a] = e
        self._ne += 1
        return e

    def _set_half(self, e: int, rel: Pose2, w: float):
        self._ew[e] = w
        self._erth[e] = rel.theta
        self._erx[e] = rel.x
        self._ery[e] = rel.y

    def _link(self, edge: GraphEdge) -> tuple[int, int]:
        inv = edge.rel.invert()
        w = edge.weight
        self._adj.setdefault(edge.a, []).append((edge.b, edge.rel, w))
        self._adj.setdefault(edge.b, []).append((edge.a, inv, w))
        ea = self._add_half(edge.a, edge.b, edge.rel, w)
        eb = self._add_half(edge.b, edge.a, inv, w)
        return ea, eb

    def add_measurement(self, rel_from_prev: Pose2, volume: LocalVolume, true_pose: Pose2) -> int:
        """Append a vertex. For the first vertex, rel_from_prev is the
        absolute initial pose estimate; afterwards it is the estimated
        odometry increment from the previous vertex."""
        vid = len(self.vertices)
        if vid == 0:
            est = rel_from_prev
        else:
            est = self.vertices[-1].est_pose_global.compose(rel_from_prev)
            self.edges.append(GraphEdge(vid - 1, vid, rel_from_prev, EdgeKind.ODOMETRY))
            self._link(self.edges[-1])
        self.vertices.append(Vertex(vid, volume, true_pose, est))
        self._adj.setdefault(vid, [])
        self._grow_vertex_slots(vid)
        return vid

    def add_place_recognition(self, a: int, b: int, rel: Pose2):
        """Add (or replace) a place-recognition edge T_{a,b}."""
        if a == b:
            raise ValueError("place recognition self-edge")
        if not (0 <= a < len(self.vertices) and 0 <= b < len(self.vertices)):
            raise KeyError("unknown vertex id")
        key = (a, b) if a < b else (b, a)
        i = self._pr_index.get(key)
        edge = GraphEdge(a, b, rel, EdgeKind.PLACE_RECOGNITION)
        if i is not None:
            self.edges[i] = edge
            p0, p1 = self._pr_adj_pos[key]
            pa, pb = (p0, p1) if edge.a == key[0] else (p1, p0)
            inv = edge.rel.invert()
            self._adj[edge.a][pa] = (edge.b, edge.rel, edge.weight)
            self._adj[edge.b][pb] = (edge.a, inv, edge.weight)
            h0, h1 = self._pr_half[key]
            ha, hb = (h0, h1) if edge.a == key[0] else (h1, h0)
            self._set_half(ha, edge.rel, edge.weight)
            self._set_half(hb, inv, edge.weight)
            return
        self._pr_index[key] = len(self.edges)
        pa = len(self._adj.setdefault(edge.a, []))
        pb = len(self._adj.setdefault(edge.b, []))
        self._pr_adj_pos[key] = (pa, pb) if edge.a == key[0] else (pb, pa)
        self.edges.append(edge)
        ea, eb = self._link(edge)
        self._pr_half[key] = (ea, eb) if edge.a == key[0] else (eb, ea)

    def _rebuild_adjacency(self):
        self._adj = {v.id: [] for v in self.vertices}
        self._pr_index = {}
        self._pr_adj_pos = {}
        self._pr_half = {}
        self._ne = 0
        self._ehead = np.full(max(64, len(self.vertices)), -1, dtype=np.int64)
        for i, e in enumerate(self.edges):
            if e.kind is EdgeKind.PLACE_RECOGNITION:
                key = (e.a, e.b) if e.a < e.b else (e.b, e.a)
                self._pr_index[key] = i
                pa = len(self._adj.setdefault(e.a, []))
                pb = len(self._adj.setdefault(e.b, []))
                self._pr_adj_pos[key] = (pa, pb) if e.a == key[0] else (pb, pa)
                ea, eb = self._link(e)
                self._pr_half[key] = (ea, eb) if e.a == key[0] else (eb, ea)
            else:
                self._link(e)

    def _dijkstra(self, source: int, radius: float | None = None, stop_pred=None):
        """Deterministic Dijkstra (ties broken by vertex id).

        Returns (dist, parent, parent_rel, stop_vertex). parent_rel[v] is the
        transform T_{parent[v], v}. If stop_pred is given, stops at the first
        finalized vertex satisfying it.
        """
        dist = {source: 0.0}
        parent = {source: None}
        parent_rel = {}
        done = set()
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            if stop_pred is not None and stop_pred(u):
                return dist, parent, parent_rel, u
            for v, rel, w in self._adj.get(u, ()):
                if v in done:
                    continue
                nd = d + w
                if radius is not None and nd > radius:
                    continue
                if v not in dist or nd < dist[v]:
                    dist[v] = nd
                    parent[v] = u
                    parent_rel[v] = rel
                    heapq.heappush(heap, (nd, v))
        return dist, parent, parent_rel, None

    def shortest_path(self, a: int, b: int) -> list[int]:
        _, parent, _, _ = self._dijkstra(a, stop_pred=lambda u: u == b)
        path = [b]
        while path[-1] != a:
            path.append(parent[path[-1]])
        return path[::-1]

    def shortest_path_transform(self, a: int, b: int) -> Pose2:
        """Composition of edge transforms along the minimum-weight path a->b."""
        _, parent, parent_rel, _ = self._dijkstra(a, stop_pred=lambda u: u == b)
        rels = []
        v = b
        while v != a:
            rels.append(parent_rel[v])
            v = parent[v]
        t = IDENTITY
        for rel in reversed(rels):
            t = t.compose(rel)
        return t

    def graph_distance(self, a: int, b: int) -> float:
        dist, _, _, _ = self._dijkstra(a, stop_pred=lambda u: u == b)
        return dist[b]

    def consolidation_scope(self, center: int, radius: float) -> list[tuple[int, Pose2]]:
        """Vertices within Dijkstra distance `radius` of center, each with the
        transform taking its local frame into the center frame."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        dist, parent, parent_rel, _ = self._dijkstra(center, radius=radius)
        transforms = {center: IDENTITY}

        def xf(v):
            if v not in transforms:
                transforms[v] = xf(parent[v]).compose(parent_rel[v])
            return transforms[v]

        return [(v, xf(v)) for v in sorted(dist)]

    def scope_transforms(self, center: int, radius: float):
        """consolidation_scope as plain arrays: (ids, theta, x, y, cos, sin)
        of T_{center <- v}, ids ascending. Avoids per-vertex Pose2 objects on
        the per-step hot path."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        if _scope_dijkstra is not None:
            ids, th, x, y = _scope_dijkstra(
                self._ehead,
                self._enext[: self._ne],
                self._eto[: self._ne],
                self._ew[: self._ne],
                self._erth[: self._ne],
                self._erx[: self._ne],
                self._ery[: self._ne],
                center,
                radius,
                len(self.vertices),
            )
            return ids.tolist(), th, x, y, np.cos(th), np.sin(th)
        dist, parent, parent_rel, _ = self._dijkstra(center, radius=radius)
        tf = {center: (0.0, 0.0, 0.0, 1.0, 0.0)}

        def xf(v):
            t = tf.get(v)
            if t is None:
                pth, px, py, pc, ps = xf(parent[v])
                r = parent_rel[v]
                th = wrap_angle(pth + r.theta)
                t = (
                    th,
                    px + pc * r.x - ps * r.y,
                    py + ps * r.x + pc * r.y,
                    math.cos(th),
                    math.sin(th),
                )
                tf[v] = t
            return t

        ids = sorted(dist)
        n = len(ids)
        out = np.empty((n, 5))
        for k, v in enumerate(ids):
            out[k] = xf(v)
        return ids, out[:, 0], out[:, 1], out[:, 2], out[:, 3], out[:, 4]

    def nearest_vertex_with_frontiers(self, source: int, predicate=None):
        """Closest vertex (graph distance, ties by id) whose volume still has
        frontier fragments; None when exploration is complete.

        Returns (vertex id, path from source). An optional predicate replaces
        the default frontier test."""
        if predicate is None:
            predicate = lambda v: self.vertices[v].volume.has_frontiers()
        dist, parent, _, hit = self._dijkstra(source, stop_pred=predicate)
        if hit is None:
            return None
        path = [hit]
        while path[-1] != source:
            path.append(parent[path[-1]])
        return hit, path[::-1]

    def total_frontier_length(self) -> float:
        return sum(v.volume.frontier_length() for v in self.vertices)

    # -- serialization (debugging / SVG re-rendering) --

    def to_text(self) -> str:
        def f(x):
            return repr(float(x))

        lines = ["POSEGRAPH v1"]
        for v in self.vertices:
            e, t = v.est_pose_global, v.true_pose
            lines.append(
                f"VERTEX {v.id} est {f(e.theta)} {f(e.x)} {f(e.y)} "
                f"true {f(t.theta)} {f(t.x)} {f(t.y)}"
            )
            vol = v.volume
            coords = " ".join(f"{f(x)} {f(y)}" for x, y in vol.verts)
            lines.append(f"VOLUME {v.id} {len(vol.verts)} {coords}")
            for i, spans in enumerate(vol.edge_spans):
                for s in spans:
                    lines.append(f"SPAN {v.id} {i} {f(s.t0)} {f(s.t1)} {s.label.value}")
        for e in self.edges:
            lines.append(f"EDGE {e.kind.value} {e.a} {e.b} {f(e.rel.theta)} {f(e.rel.x)} {f(e.rel.y)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PoseGraph":
        import numpy as np

        g = cls()
        volumes: dict[int, tuple] = {}
        vertices: dict[int, tuple[Pose2, Pose2]] = {}
        edges = []
        for ln, raw in enumerate(text.splitlines(), 1):
            parts = raw.split()
            if not parts or parts[0] == "POSEGRAPH":
                continue
            tag = parts[0]
            if tag == "VERTEX":
                vid = int(parts[1])
                est = Pose2(float(parts[3]), float(parts[4]), float(parts[5]))
                true = Pose2(float(parts[7]), float(parts[8]), float(parts[9]))
                vertices[vid] = (est, true)
            elif tag == "VOLUME":
                vid = int(parts[1])
                n = int(parts[2])
                vals = [float(s) for s in parts[3 : 3 + 2 * n]]
                volumes[vid] = (np.array(vals).reshape(n, 2), [[] for _ in range(n)])
            elif tag == "SPAN":
                vid = int(parts[1])
                volumes[vid][1][int(parts[2])].append(
                    LabeledSpan(float(parts[3]), float(parts[4]), EdgeLabel(parts[5]))
                )
            elif tag == "EDGE":
                edges.append(
                    (EdgeKind(parts[1]), int(parts[2]), int(parts[3]),
                     Pose2(float(parts[4]), float(parts[5]), float(parts[6])))
                )
            else:
                raise ValueError(f"line {ln}: unknown record {tag!r}")
        for vid in sorted(vertices):
            est, true = vertices[vid]
            verts, spans = volumes[vid]
            g.vertices.append(Vertex(vid, LocalVolume(verts, spans), true, est))
            g._adj.setdefault(vid, [])
        g.edges = [GraphEdge(a, b, rel, kind) for kind, a, b, rel in edges]
        g._rebuild_adjacency()
        return g
