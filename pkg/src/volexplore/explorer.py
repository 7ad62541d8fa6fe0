"""Frontier-based exploration over the polygon representation.

Three states: reactive (chase frontiers in the current volume), deliberate
(teach-and-repeat back to the closest pose-graph vertex that still has
frontiers) and complete. Deliberate travel is modeled as perfect repeat of
the taught trail: the true pose moves along the recorded true poses of the
path, and reaching a path vertex yields an exact place-recognition edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .geom2d import Pose2, wrap_angle
from .local_volume import LocalVolume
from .pose_graph import PoseGraph

# Frontier fragments shorter than this are ignored by the planner (not by the
# representation): sub-millimeter clipping residue cannot hide a grid cell.
SIGNIFICANT_FRONTIER_LEN = 1e-3


class Phase(Enum):
    REACTIVE = "reactive"
    DELIBERATE = "deliberate"
    COMPLETE = "complete"


@dataclass
class ExplorerConfig:
    step_len: float = 0.5
    max_turn: float = math.radians(30.0)
    g_pullback: float = 0.25
    scope_radius: float = 10.0
    stuck_limit: int = 20
    demote_radius: float = 1.0
    # All frontiers within this range of a completed in-place sweep are
    # judged together: the robot scanned every heading from there.
    investigate_radius: float = 2.5
    # Frontier length must shrink by at least this much for an investigation
    # to count as progress (sub-mm clipping churn is not progress).
    progress_min_len: float = 0.01
    # Repeat stops short of the target so the new scan pose never coincides
    # exactly with an old one (coincident volumes would erase each other's
    # frontiers without observing anything new).
    arrival_offset: float = 0.2


@dataclass
class MotionCommand:
    """Commanded pose increment for one step (reactive state)."""

    rel: Pose2


@dataclass
class RepeatCommand:
    """Teach-and-repeat step: the simulator moves the true pose here exactly."""

    target_true_pose: Pose2
    reached_vertex: int | None


@dataclass
class ExplorerState:
    phase: Phase
    target: int | None = None
    path: list[int] = field(default_factory=list)


def select_reactive_frontier(volume: LocalVolume, heading: float, skip=()):
    """Frontier goal minimizing heading change; None if no usable frontier.

    Returns (edge_idx, goal_direction_angle, midpoint). Fragments listed in
    `skip` (by edge index) and negligible fragments are ignored.
    """
    best = None
    for idx, (frag_edge, t0, t1) in enumerate(volume.significant_frontier_fragments(SIGNIFICANT_FRONTIER_LEN)):
        if frag_edge in skip:
            continue
        a, b = volume.edge_points(frag_edge)
        mx = float(a[0] + (t0 + t1) / 2.0 * (b[0] - a[0]))
        my = float(a[1] + (t0 + t1) / 2.0 * (b[1] - a[1]))
        ang = math.atan2(my, mx)
        score = abs(wrap_angle(ang - heading))
        if best is None or score < best[0]:
            best = (score, idx, frag_edge, ang, (mx, my))
    if best is None:
        return None
    return best[2], best[3], best[4]


class PolygonExplorer:
    def __init__(self, graph: PoseGraph, config: ExplorerConfig | None = None):
        self.graph = graph
        self.cfg = config or ExplorerConfig()
        self.state = ExplorerState(Phase.REACTIVE)
        # Goal points (naive-global frame) skipped by the planner. Stuck
        # demotions are transient (cleared when deliberate travel relocates
        # the robot); exhausted demotions are permanent (the robot stood at
        # the frontier, looked straight at it and nothing changed, so it is
        # clipping residue rather than reachable unknown space).
        self._stuck_demotes: list[tuple[float, float]] = []
        self._exhausted_demotes: list[tuple[float, float]] = []
        self._stuck_count = 0
        # Deliberate bookkeeping.
        self._trail: list[Pose2] = []
        self._seg_idx = 0
        # After arrival: (target vertex, its frontier length when it was
        # chosen, stage, remaining step budget). Stage "approach" walks up to
        # the target's frontier; stage "sweep" turns a full circle there so
        # every direction is scanned before the frontier is written off.
        self._focus: tuple[int, float, str, int] | None = None
        self._target_len0 = 0.0
        # Frontier lengths of all vertices near a sweep, snapshotted when the
        # sweep starts; vertices that did not shrink are demoted together.
        self._sweep_snapshot: list[tuple[int, float]] = []
        self._last_goal_est: tuple[float, float] | None = None

    # -- state queries --

    def _all_demotes(self):
        return self._stuck_demotes + self._exhausted_demotes

    def _is_demoted(self, pt: tuple[float, float]) -> bool:
        return any(
            math.hypot(pt[0] - gx, pt[1] - gy) <= self.cfg.demote_radius
            for gx, gy in self._all_demotes()
        )

    def _frontier_midpoints(self, vid: int):
        v = self.graph.vertices[vid]
        est = v.est_pose_global
        out = []
        for i, t0, t1 in v.volume.significant_frontier_fragments(SIGNIFICANT_FRONTIER_LEN):
            a, b = v.volume.edge_points(i)
            tm = (t0 + t1) / 2.0
            local = (float(a[0] + tm * (b[0] - a[0])), float(a[1] + tm * (b[1] - a[1])))
            out.append((i, local, est.apply(local)))
        return out

    def _frontier_standpoints(self, vid: int):
        """World-frame points just inside the target polygon, one per frontier
        fragment: the fragment midpoint pulled back along the edge's inward
        normal. Standing there guarantees free space next to the frontier
        even when the straight line to the midpoint clips an obstacle corner.
        """
        v = self.graph.vertices[vid]
        est = v.est_pose_global
        out = []
        for i, t0, t1 in v.volume.significant_frontier_fragments(SIGNIFICANT_FRONTIER_LEN):
            a, b = v.volume.edge_points(i)
            tm = (t0 + t1) / 2.0
            mx = float(a[0] + tm * (b[0] - a[0]))
            my = float(a[1] + tm * (b[1] - a[1]))
            ex, ey = float(b[0] - a[0]), float(b[1] - a[1])
            n = math.hypot(ex, ey)
            if n < 1e-12:
                out.append(est.apply((mx, my)))
                continue
            # CCW boundary: the interior is to the left of the edge direction.
            out.append(est.apply((mx - ey / n * self.cfg.g_pullback,
                                  my + ex / n * self.cfg.g_pullback)))
        return out

    def _work_length(self, vid: int) -> float:
        return self.graph.vertices[vid].volume.frontier_length()

    def _vertex_has_work(self, vid: int) -> bool:
        mids = self._frontier_midpoints(vid)
        if not mids:
            return False
        if not self._stuck_demotes and not self._exhausted_demotes:
            return True
        return any(not self._is_demoted(mid) for _, _, mid in mids)

    def _any_frontier_left(self) -> bool:
        return any(v.volume.has_frontiers(SIGNIFICANT_FRONTIER_LEN) for v in self.graph.vertices)

    # -- planning --

    def plan_step(self, current: int):
        """Returns (command, state); command is MotionCommand, RepeatCommand
        or None (complete)."""
        if self.state.phase is Phase.DELIBERATE:
            cmd = self._repeat_step(current)
            if cmd is not None:
                return cmd, self.state
            # Arrived. Stuck demotions were tied to the previous location;
            # focus on the target so its frontiers enter the field of view.
            self._stuck_demotes.clear()
            target = self.state.target
            self.state = ExplorerState(Phase.REACTIVE)
            if target is not None and target != current:
                # Progress is judged against the frontier length recorded when
                # the target was selected, so relabels en route count.
                self._focus = self._new_focus(target)

        cmd = self._reactive_step(current)
        if cmd is not None:
            self._focus = None
            return cmd, self.state

        cmd = self._focus_step(current)
        if cmd is not None:
            return cmd, self.state

        found = self.graph.nearest_vertex_with_frontiers(
            current, predicate=lambda v: v != current and self._vertex_has_work(v)
        )
        if found is None and self._stuck_demotes:
            self._stuck_demotes.clear()
            cmd = self._reactive_step(current)
            if cmd is not None:
                return cmd, self.state
            found = self.graph.nearest_vertex_with_frontiers(
                current, predicate=lambda v: v != current and self._vertex_has_work(v)
            )
        if found is None:
            self.state = ExplorerState(Phase.COMPLETE)
            return None, self.state
        target, path = found
        self.state = ExplorerState(Phase.DELIBERATE, target, path)
        self._target_len0 = self._work_length(target)
        self._trail = [self.graph.vertices[v].true_pose for v in path]
        self._seg_idx = 1
        cmd = self._repeat_step(current)
        if cmd is None:
            # Target already within arrival distance: focus on it in place.
            self.state = ExplorerState(Phase.REACTIVE)
            self._focus = self._new_focus(target)
            cmd = self._focus_step(current)
            if cmd is not None:
                return cmd, self.state
            # Focus resolved immediately (target frontier demoted); replan.
            return self.plan_step(current)
        return cmd, self.state

    def _max_focus_rotations(self) -> int:
        return int(math.ceil(2.0 * math.pi / self.cfg.max_turn))

    def _new_focus(self, target: int) -> tuple[int, float, str, int]:
        return (target, self._target_len0, "approach", 0)

    def _focus_step(self, current: int):
        """Investigate the focused vertex's unresolved frontier.

        Walk up to the nearest frontier (a fresh scan from the doorstep may
        be occluded by the same corner that bounds the old one, so standing
        at a distance proves nothing), then turn a full circle so the
        surroundings are scanned from every heading. Frontiers that did not
        shrink materially despite that are demoted as unresolvable residue —
        jointly for every vertex near the sweep, since they were all in view.
        """
        if self._focus is None:
            return None
        target, len0, stage, budget = self._focus
        if self._work_length(target) <= len0 - self.cfg.progress_min_len:
            # The target shrank since it was picked: resolved.
            self._focus = None
            self._sweep_snapshot = []
            return None
        mids = self._frontier_midpoints(target)
        if not mids:
            self._focus = None
            self._sweep_snapshot = []
            return None
        cur_est = self.graph.vertices[current].est_pose_global
        inv = cur_est.invert()
        best = None
        for pt in self._frontier_standpoints(target):
            lx, ly = inv.apply(pt)
            d = math.hypot(lx, ly)
            if best is None or d < best[0]:
                best = (d, lx, ly, pt)
        d, lx, ly, pt = best
        if stage == "approach":
            if budget == 0:
                # Straight-line steps plus a full circle of in-place turns.
                budget = int(math.ceil(d / self.cfg.step_len)) + 4 + self._max_focus_rotations()
            if d > self.cfg.g_pullback + 1e-6 and budget > 1:
                self._focus = (target, len0, "approach", budget - 1)
                self._last_goal_est = pt
                return MotionCommand(self._command_toward(lx, ly))
            stage, budget = "sweep", self._max_focus_rotations()
            self._sweep_snapshot = self._snapshot_nearby(current)
        if budget > 0:
            self._focus = (target, len0, "sweep", budget - 1)
            return MotionCommand(Pose2(self.cfg.max_turn, 0.0, 0.0))
        self._focus = None
        # Stood there and looked everywhere; whatever did not shrink is
        # residue the robot cannot resolve from anywhere.
        for vid, before in self._sweep_snapshot:
            if self._work_length(vid) > before - self.cfg.progress_min_len:
                for _, _, m in self._frontier_midpoints(vid):
                    self._exhausted_demotes.append(m)
        self._sweep_snapshot = []
        return None

    def _snapshot_nearby(self, current: int):
        """Frontier lengths of every vertex whose frontier lies within
        investigate_radius of the robot, recorded before a sweep."""
        cx = self.graph.vertices[current].est_pose_global
        out = []
        for v in self.graph.vertices:
            if not v.volume.has_frontiers(SIGNIFICANT_FRONTIER_LEN):
                continue
            for _, _, mid in self._frontier_midpoints(v.id):
                if math.hypot(mid[0] - cx.x, mid[1] - cx.y) <= self.cfg.investigate_radius:
                    out.append((v.id, self._work_length(v.id)))
                    break
        return out

    def _reactive_step(self, current: int):
        vol = self.graph.vertices[current].volume
        est = self.graph.vertices[current].est_pose_global
        best = None
        for i, t0, t1 in vol.significant_frontier_fragments(SIGNIFICANT_FRONTIER_LEN):
            a, b = vol.edge_points(i)
            tm = (t0 + t1) / 2.0
            mx = float(a[0] + tm * (b[0] - a[0]))
            my = float(a[1] + tm * (b[1] - a[1]))
            d = math.hypot(mx, my)
            # A goal closer than the pullback collapses onto the robot and
            # commands no motion; such fragments cannot be approached.
            if d <= self.cfg.g_pullback + 1e-6:
                continue
            if self._is_demoted(est.apply((mx, my))):
                continue
            score = abs(math.atan2(my, mx))
            if best is None or score < best[0]:
                best = (score, mx, my, d)
        if best is None:
            return None
        _, mx, my, d = best
        # Pull the goal back toward the robot so it stays in known free space.
        gx = mx * (d - self.cfg.g_pullback) / d
        gy = my * (d - self.cfg.g_pullback) / d
        self._last_goal_est = est.apply((mx, my))
        return MotionCommand(self._command_toward(gx, gy))

    def _command_toward(self, gx: float, gy: float) -> Pose2:
        phi = math.atan2(gy, gx)
        turn = max(-self.cfg.max_turn, min(self.cfg.max_turn, phi))
        dist = math.hypot(gx, gy)
        if abs(phi) > self.cfg.max_turn + 1e-9:
            return Pose2(turn, 0.0, 0.0)  # rotate in place first
        d = min(self.cfg.step_len, dist)
        return Pose2(turn, d * math.cos(turn), d * math.sin(turn))

    def _repeat_step(self, current: int):
        """Advance one step of trail arc length; None when arrived.

        Intermediate waypoints are passed through; the final waypoint is
        approached only up to arrival_offset.
        """
        cur = self.graph.vertices[current].true_pose
        px, py = cur.x, cur.y
        budget = self.cfg.step_len
        reached = None
        heading = cur.theta
        while True:
            if self._seg_idx >= len(self._trail):
                return None
            wp = self._trail[self._seg_idx]
            rem = math.hypot(wp.x - px, wp.y - py)
            final = self._seg_idx == len(self._trail) - 1
            stop_rem = self.cfg.arrival_offset if final else 0.0
            if rem > 1e-12:
                heading = math.atan2(wp.y - py, wp.x - px)
            if final:
                if rem <= stop_rem + 1e-9:
                    self._seg_idx += 1
                    if reached is not None:
                        return RepeatCommand(Pose2(heading, px, py), reached)
                    return None
                step = min(budget, rem - stop_rem)
                t = step / rem
                px += t * (wp.x - px)
                py += t * (wp.y - py)
                if rem - step <= stop_rem + 1e-9:
                    reached = self.state.path[self._seg_idx]
                    self._seg_idx += 1
                return RepeatCommand(Pose2(heading, px, py), reached)
            if rem <= budget + 1e-9:
                budget -= rem
                px, py = wp.x, wp.y
                reached = self.state.path[self._seg_idx]
                self._seg_idx += 1
                continue
            t = budget / rem
            px += t * (wp.x - px)
            py += t * (wp.y - py)
            return RepeatCommand(Pose2(heading, px, py), reached)

    # -- feedback from the simulator --

    def report_motion(self, commanded_len: float, executed_len: float):
        """Stuck detection: repeated fully-clamped reactive steps demote the
        current goal so it is retried only via deliberate navigation."""
        if self.state.phase is not Phase.REACTIVE:
            self._stuck_count = 0
            return
        if commanded_len > 1e-3 and executed_len < 1e-3:
            self._stuck_count += 1
        elif executed_len > 1e-3:
            self._stuck_count = 0
        if self._stuck_count >= self.cfg.stuck_limit:
            self._stuck_count = 0
            if self._last_goal_est is not None:
                self._stuck_demotes.append(self._last_goal_est)
