"""Two-panel SVG rendering: ground truth next to the robot's representation.

Ground truth panel: occupied cells yellow, covered free cells green, unknown
free cells blue, true trajectory black, place recognitions green. The
representation panel shows the pose graph in black with obstacle edges red,
frontier edges blue and consolidation-scope volumes green; grid runs show
the believed occupancy grid instead.
"""
from __future__ import annotations

import math

from .local_volume import EdgeLabel

SCALE = 14.0  # px per meter
COLORS = {
    "occupied": "#e8c916",
    "known_free": "#7ccf6e",
    "unknown_free": "#6e9fcf",
    "trajectory": "#000000",
    "place_recognition": "#1e9e3c",
    "obstacle": "#d62222",
    "frontier": "#2244d6",
    "scope": "#1e9e3c",
    "graph": "#000000",
}


class _Panel:
    def __init__(self, ox: float, world_h: float):
        self.ox = ox
        self.world_h = world_h
        self.parts: list[str] = []

    def pt(self, x: float, y: float) -> tuple[float, float]:
        # y axis flipped: world row 0 is at the bottom.
        return (self.ox + x * SCALE, (self.world_h - y) * SCALE)

    def rect(self, x, y, w, h, fill):
        px, py = self.pt(x, y + h)
        self.parts.append(
            f'<rect x="{px:.1f}" y="{py:.1f}" width="{w * SCALE:.1f}" height="{h * SCALE:.1f}" fill="{fill}"/>'
        )

    def line(self, a, b, stroke, width=1.0, opacity=1.0):
        x1, y1 = self.pt(*a)
        x2, y2 = self.pt(*b)
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def polyline(self, pts, stroke, width=1.0):
        if len(pts) < 2:
            return
        coords = " ".join("{:.2f},{:.2f}".format(*self.pt(x, y)) for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width}"/>'
        )


def render_svg(artifacts, scope_ids=()) -> str:
    env = artifacts.env
    cs = env.cell_size
    wm = env.width * cs
    hm = env.height * cs
    gap = 1.0 * SCALE
    total_w = 2 * wm * SCALE + gap
    total_h = hm * SCALE

    left = _Panel(0.0, hm)
    right = _Panel(wm * SCALE + gap, hm)

    covered = artifacts.tracker.first_distance
    for row in range(env.height):
        for col in range(env.width):
            x, y = col * cs, row * cs
            if env.occupancy[row, col]:
                left.rect(x, y, cs, cs, COLORS["occupied"])
            elif (col, row) in covered:
                left.rect(x, y, cs, cs, COLORS["known_free"])
            else:
                left.rect(x, y, cs, cs, COLORS["unknown_free"])
    traj = [(p.x, p.y) for p in artifacts.true_trajectory]
    left.polyline(traj, COLORS["trajectory"], 1.2)
    for a, b in artifacts.pr_events:
        pa = artifacts.true_trajectory[a]
        pb = artifacts.true_trajectory[b]
        left.line((pa.x, pa.y), (pb.x, pb.y), COLORS["place_recognition"], 1.0, 0.7)

    right.rect(0, 0, wm, hm, "#f7f7f7")
    if artifacts.graph is not None:
        g = artifacts.graph
        scope = set(scope_ids)
        for e in g.edges:
            pa = g.vertices[e.a].est_pose_global
            pb = g.vertices[e.b].est_pose_global
            right.line((pa.x, pa.y), (pb.x, pb.y), COLORS["graph"], 0.8)
        for v in g.vertices:
            est = v.est_pose_global
            verts = est.apply_many(v.volume.verts)
            n = len(verts)
            if v.id in scope:
                pts = [tuple(p) for p in verts] + [tuple(verts[0])]
                right.polyline(pts, COLORS["scope"], 0.8)
            for i, spans in enumerate(v.volume.edge_spans):
                a = verts[i]
                b = verts[(i + 1) % n]
                for s in spans:
                    if s.label is EdgeLabel.FREE:
                        continue
                    color = COLORS["obstacle"] if s.label is EdgeLabel.OBSTACLE else COLORS["frontier"]
                    p = (a[0] + s.t0 * (b[0] - a[0]), a[1] + s.t0 * (b[1] - a[1]))
                    q = (a[0] + s.t1 * (b[0] - a[0]), a[1] + s.t1 * (b[1] - a[1]))
                    right.line(p, q, color, 1.0)
    elif artifacts.grid is not None:
        for (c, r), state in sorted(artifacts.grid.cells.items()):
            color = COLORS["occupied"] if state else COLORS["known_free"]
            right.rect(c * cs, r * cs, cs, cs, color)

    body = "\n".join(left.parts + right.parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0f}" height="{total_h:.0f}" '
        f'viewBox="0 0 {total_w:.0f} {total_h:.0f}">\n<rect width="100%" height="100%" fill="white"/>\n'
        f"{body}\n</svg>\n"
    )


def heading_marker(pose, size=0.4):
    tip = (pose.x + size * math.cos(pose.theta), pose.y + size * math.sin(pose.theta))
    return (pose.x, pose.y), tip
