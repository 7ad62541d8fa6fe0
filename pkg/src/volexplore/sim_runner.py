"""Simulation loop: noise injection, place-recognition oracle, ground-truth
coverage tracking and run metrics.

Per step: planner command -> noise applied to the true update -> collision
clamp -> scan at the true pose -> representation update -> coverage update.
The estimated increment stays equal to the command; noise corrupts only the
executed motion, its variance growing linearly with commanded distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import baseline_grid as bg
from .consolidation import Consolidator
from .environment import GridEnvironment, cast_scan, line_of_sight, load_environment
from .explorer import (
    ExplorerConfig,
    MotionCommand,
    Phase,
    PolygonExplorer,
    RepeatCommand,
)
from .geom2d import Pose2, points_in_polygon, wrap_angle
from .local_volume import build_local_volume, scan_polygon_vertices
from .pose_graph import PoseGraph

METHODS = ("ours", "grid", "grid-lc")


class NoiseModel:
    """Zero-mean Gaussian pose noise with variance f(sigma, cmd) = |t|*sigma^2."""

    def __init__(self, sigma_pos: float, sigma_rot: float, seed: int):
        self.sigma_pos = sigma_pos
        self.sigma_rot = sigma_rot
        self.rng = np.random.default_rng(seed)

    def apply_noise(self, cmd: Pose2) -> tuple[Pose2, Pose2]:
        """Returns (true increment, estimated increment)."""
        d = cmd.translation_norm
        std_pos = math.sqrt(d) * self.sigma_pos
        std_rot = math.sqrt(d) * self.sigma_rot
        nx, ny, nt = self.rng.normal(0.0, 1.0, 3)
        noise = Pose2(nt * std_rot, nx * std_pos, ny * std_pos)
        return cmd.compose(noise), cmd


def place_recognition_oracle(
    true_poses: list[Pose2],
    cum_dist: list[float],
    current: int,
    d_pr: float,
    env: GridEnvironment,
    xy: np.ndarray | None = None,
    cum: np.ndarray | None = None,
):
    """Nearest prior pose within d_pr (Euclidean, ground truth), excluding
    poses closer than 1.5*d_pr along the traversed path and poses without
    line of sight. Returns (matched index, exact relative pose) or None.

    xy/cum may carry the pose positions and cumulative distances as arrays
    (rows [0, current)) to avoid rebuilding them on every call."""
    cur = true_poses[current]
    if xy is not None:
        xs = xy[:current, 0]
        ys = xy[:current, 1]
        along = cum_dist[current] - cum[:current]
    else:
        xs = np.fromiter((p.x for p in true_poses[:current]), dtype=float, count=current)
        ys = np.fromiter((p.y for p in true_poses[:current]), dtype=float, count=current)
        along = cum_dist[current] - np.asarray(cum_dist[:current])
    d = np.hypot(xs - cur.x, ys - cur.y)
    eligible = np.nonzero((d <= d_pr) & (along >= 1.5 * d_pr))[0]
    # Check line of sight nearest-first: the first clear one is the match.
    for l in eligible[np.argsort(d[eligible], kind="stable")]:
        if line_of_sight(env, (xs[l], ys[l]), (cur.x, cur.y)):
            l = int(l)
            return l, true_poses[l].invert().compose(true_poses[current])
    return None


class CoverageTracker:
    """First-coverage distance per ground-truth free cell."""

    def __init__(self, env: GridEnvironment):
        self.free_cells = set(env.free_cells())
        self.first_distance: dict[tuple[int, int], float] = {}
        self.distance = 0.0

    def advance(self, d: float):
        self.distance += d

    def mark(self, cells):
        for c in cells:
            if c in self.free_cells and c not in self.first_distance:
                self.first_distance[c] = self.distance

    def coverage_ratio(self) -> float:
        return len(self.first_distance) / len(self.free_cells)

    def compute_d_exp(self) -> float:
        if len(self.first_distance) != len(self.free_cells):
            raise ValueError("d_exp is undefined below full coverage")
        return sum(self.first_distance.values()) / len(self.free_cells)


@dataclass
class RunConfig:
    map_text: str
    method: str = "ours"
    alpha: float = 0.0
    beta: float = 1.0  # d_pr = beta * d_fov
    seed: int = 0
    n_rays: int = 64
    fov: float = math.radians(115.0)
    d_fov: float = 5.0
    delta: float = 0.5
    scope_radius: float = 10.0
    step_len: float = 0.5
    max_turn: float = math.radians(30.0)
    g_pullback: float = 0.25
    max_steps: int = 50000
    start: Pose2 | None = None
    cell_size: float = 1.0
    snapshot_every: int = 0  # steps between trace snapshots for rendering

    @property
    def sigma_pos(self) -> float:
        return self.alpha * 0.1

    @property
    def sigma_rot(self) -> float:
        return self.alpha * math.radians(5.0)

    @property
    def d_pr(self) -> float:
        return self.beta * self.d_fov


@dataclass
class RunResult:
    method: str
    alpha: float
    beta: float
    seed: int
    d_max: float
    d_exp: float | None
    final_coverage: float
    believed_complete: bool
    steps: int
    trace: list[tuple[float, float]]
    artifacts: "RunArtifacts | None" = None


@dataclass
class RunArtifacts:
    env: GridEnvironment
    tracker: CoverageTracker
    true_trajectory: list[Pose2]
    pr_events: list[tuple[int, int]]
    graph: PoseGraph | None = None
    grid: bg.OccupancyGrid | None = None
    scope_ids: list[int] = field(default_factory=list)


def default_start(env: GridEnvironment) -> Pose2:
    """Free cell center closest to the map center."""
    cx = env.width * env.cell_size / 2.0
    cy = env.height * env.cell_size / 2.0
    best = min(
        env.free_cells(),
        key=lambda cr: ((cr[0] + 0.5) * env.cell_size - cx) ** 2
        + ((cr[1] + 0.5) * env.cell_size - cy) ** 2,
    )
    return Pose2(0.0, (best[0] + 0.5) * env.cell_size, (best[1] + 0.5) * env.cell_size)


def clamp_increment(
    env: GridEnvironment, pose: Pose2, true_inc: Pose2, est_inc: Pose2, margin: float = 0.01
) -> tuple[Pose2, Pose2]:
    """Scale back a blocked translation so the robot stops short of occupied
    space; the estimated increment is scaled identically."""
    target = pose.compose(true_inc)
    dx = target.x - pose.x
    dy = target.y - pose.y
    dist = math.hypot(dx, dy)
    if dist <= 1e-12:
        return true_inc, est_inc
    allowed = _free_distance(env, pose.x, pose.y, dx / dist, dy / dist, dist)
    if allowed >= dist:
        return true_inc, est_inc
    scale = max(0.0, allowed - margin) / dist
    return (
        Pose2(true_inc.theta, true_inc.x * scale, true_inc.y * scale),
        Pose2(est_inc.theta, est_inc.x * scale, est_inc.y * scale),
    )


def _free_distance(env, ox, oy, dx, dy, max_d):
    """Distance along (dx, dy) to the first occupied-cell boundary."""
    cs = env.cell_size
    col = int(math.floor(ox / cs))
    row = int(math.floor(oy / cs))
    inf = math.inf
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    t_dx = abs(cs / dx) if dx else inf
    t_dy = abs(cs / dy) if dy else inf
    t_max_x = ((col + (1 if dx > 0 else 0)) * cs - ox) / dx if dx else inf
    t_max_y = ((row + (1 if dy > 0 else 0)) * cs - oy) / dy if dy else inf
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_dx
            col += step_x
        else:
            t = t_max_y
            t_max_y += t_dy
            row += step_y
        if t >= max_d:
            return max_d
        if env.is_occupied_cell(col, row):
            return t


def run(config: RunConfig, keep_artifacts: bool = False, on_step=None) -> RunResult:
    if config.method not in METHODS:
        raise ValueError(f"unknown method {config.method!r}")
    env = load_environment(config.map_text, config.cell_size)
    start = config.start or default_start(env)
    if config.method == "ours":
        return _run_ours(config, env, start, keep_artifacts, on_step)
    return _run_grid(config, env, start, keep_artifacts, on_step)


def _scan_and_mark(env, pose, config, tracker) -> tuple:
    visited: set = set()
    scan = cast_scan(env, pose, config.fov, config.d_fov, config.n_rays, visited)
    tracker.mark(visited)
    return scan


def _run_ours(config, env, start, keep_artifacts, on_step=None):
    noise = NoiseModel(config.sigma_pos, config.sigma_rot, config.seed)
    tracker = CoverageTracker(env)
    graph = PoseGraph()
    consolidator = Consolidator(graph)
    ecfg = ExplorerConfig(
        step_len=config.step_len,
        max_turn=config.max_turn,
        g_pullback=config.g_pullback,
        scope_radius=config.scope_radius,
    )
    explorer = PolygonExplorer(graph, ecfg)

    true_pose = start
    true_poses = [start]
    cum_dist = [0.0]
    # Array mirrors of true_poses positions / cum_dist for the PR oracle.
    xy_buf = np.empty((1024, 2))
    cum_buf = np.empty(1024)
    xy_buf[0] = (start.x, start.y)
    cum_buf[0] = 0.0
    pr_events: list[tuple[int, int]] = []
    trace: list[tuple[float, float]] = []

    def pose_key(p):
        return (round(p.x * 1e9), round(p.y * 1e9), round(p.theta * 1e9))

    seen_poses = {pose_key(start)}

    scan = _scan_and_mark(env, true_pose, config, tracker)
    current = graph.add_measurement(start, build_local_volume(scan, config.delta), true_pose)
    consolidator.consolidate_new(current, config.scope_radius)
    trace.append((0.0, tracker.coverage_ratio()))

    believed_complete = False
    steps = 0
    for steps in range(1, config.max_steps + 1):
        cmd, state = explorer.plan_step(current)
        if state.phase is Phase.COMPLETE:
            believed_complete = True
            steps -= 1
            break

        extra_pr = None
        if isinstance(cmd, MotionCommand):
            true_inc, est_inc = noise.apply_noise(cmd.rel)
            true_inc, est_inc = clamp_increment(env, true_pose, true_inc, est_inc)
            new_true = true_pose.compose(true_inc)
            moved = math.hypot(new_true.x - true_pose.x, new_true.y - true_pose.y)
            explorer.report_motion(cmd.rel.translation_norm, moved)
            turned = abs(wrap_angle(new_true.theta - true_pose.theta))
            if moved < 1e-9 and turned < 1e-9:
                # Fully clamped step: the scan would duplicate the current
                # vertex exactly, so no new vertex is added.
                continue
        elif isinstance(cmd, RepeatCommand):
            new_true = cmd.target_true_pose
            # A scan pose coinciding exactly with an earlier one adds no
            # information but lets the two identical volumes consolidate each
            # other's frontiers away; nudge the heading to keep poses unique.
            while pose_key(new_true) in seen_poses:
                new_true = Pose2(
                    wrap_angle(new_true.theta + 3e-3), new_true.x, new_true.y
                )
            moved = math.hypot(new_true.x - true_pose.x, new_true.y - true_pose.y)
            est_inc = true_pose.invert().compose(new_true)
            extra_pr = cmd.reached_vertex
        else:
            raise AssertionError("planner returned no command while not complete")

        true_pose = new_true
        seen_poses.add(pose_key(true_pose))
        tracker.advance(moved)
        true_poses.append(true_pose)
        cum_dist.append(cum_dist[-1] + moved)
        if len(true_poses) > xy_buf.shape[0]:
            xy_buf = np.concatenate([xy_buf, np.empty_like(xy_buf)])
            cum_buf = np.concatenate([cum_buf, np.empty_like(cum_buf)])
        xy_buf[len(true_poses) - 1] = (true_pose.x, true_pose.y)
        cum_buf[len(true_poses) - 1] = cum_dist[-1]

        scan = _scan_and_mark(env, true_pose, config, tracker)
        current = graph.add_measurement(est_inc, build_local_volume(scan, config.delta), true_pose)

        match = place_recognition_oracle(
            true_poses, cum_dist, current, config.d_pr, env, xy=xy_buf, cum=cum_buf
        )
        if match is not None:
            graph.add_place_recognition(match[0], current, match[1])
            pr_events.append((match[0], current))
        if extra_pr is not None and extra_pr != current:
            rel = true_poses[extra_pr].invert().compose(true_pose)
            graph.add_place_recognition(extra_pr, current, rel)
            pr_events.append((extra_pr, current))

        consolidator.consolidate_new(current, config.scope_radius)
        trace.append((cum_dist[-1], tracker.coverage_ratio()))
        if on_step is not None:
            on_step(steps, RunArtifacts(env, tracker, true_poses, pr_events, graph=graph))

    return _finish(
        config, tracker, believed_complete, steps, trace,
        RunArtifacts(env, tracker, true_poses, pr_events, graph=graph) if keep_artifacts else None,
    )


def _finish(config, tracker, believed_complete, steps, trace, artifacts):
    cov = tracker.coverage_ratio()
    d_exp = tracker.compute_d_exp() if cov >= 1.0 else None
    return RunResult(
        method=config.method,
        alpha=config.alpha,
        beta=config.beta,
        seed=config.seed,
        d_max=tracker.distance,
        d_exp=d_exp,
        final_coverage=cov,
        believed_complete=believed_complete,
        steps=steps,
        trace=trace,
        artifacts=artifacts,
    )


def _grid_reactive_goal(grid, scan, est_pose, blocked):
    """Frontier cell inside the current FOV polygon minimizing heading change.

    Returns the goal in the robot frame or None.
    """
    frontiers = bg.grid_frontiers(grid, blocked)
    if not frontiers:
        return None
    cs = grid.cell_size
    centers = np.array([[(c + 0.5) * cs, (r + 0.5) * cs] for c, r in frontiers])
    verts = est_pose.apply_many(scan_polygon_vertices(scan))
    inside = points_in_polygon(centers, verts)
    if not inside.any():
        return None
    inv = est_pose.invert()
    best = None
    for k in np.nonzero(inside)[0]:
        lx, ly = inv.apply((centers[k][0], centers[k][1]))
        score = abs(math.atan2(ly, lx))
        if best is None or score < best[0]:
            best = (score, (lx, ly))
    return best[1]


def _command_toward(gx, gy, step_len, max_turn):
    phi = math.atan2(gy, gx)
    turn = max(-max_turn, min(max_turn, phi))
    if abs(phi) > max_turn + 1e-9:
        return Pose2(turn, 0.0, 0.0)
    d = min(step_len, math.hypot(gx, gy))
    return Pose2(turn, d * math.cos(turn), d * math.sin(turn))


def _run_grid(config, env, start, keep_artifacts, on_step=None):
    with_lc = config.method == "grid-lc"
    noise = NoiseModel(config.sigma_pos, config.sigma_rot, config.seed)
    tracker = CoverageTracker(env)
    grid = bg.OccupancyGrid(config.cell_size)

    true_pose = start
    est_pose = start
    true_poses = [start]
    est_poses = [start]
    cum_dist = [0.0]
    scans = []
    constraints: list[bg.Se2Constraint] = []
    pr_events: list[tuple[int, int]] = []
    blocked: set = set()
    trace: list[tuple[float, float]] = []

    scan = _scan_and_mark(env, true_pose, config, tracker)
    scans.append(scan)
    bg.integrate_scan(grid, est_pose, scan)
    trace.append((0.0, tracker.coverage_ratio()))

    believed_complete = False
    stuck = 0
    steps = 0
    for steps in range(1, config.max_steps + 1):
        goal = _grid_reactive_goal(grid, scan, est_pose, blocked)
        target_cell = None
        if goal is None:
            path = bg.grid_plan(grid, (est_pose.x, est_pose.y), blocked)
            if path is None:
                believed_complete = True
                steps -= 1
                break
            cs = grid.cell_size
            cur_cell = grid.cell_of(est_pose.x, est_pose.y)
            nxt = next((c for c in path if c != cur_cell), path[-1])
            target_cell = path[-1]
            inv = est_pose.invert()
            goal = inv.apply(((nxt[0] + 0.5) * cs, (nxt[1] + 0.5) * cs))
        cmd = _command_toward(goal[0], goal[1], config.step_len, config.max_turn)

        true_inc, est_inc = noise.apply_noise(cmd)
        true_inc, est_inc = clamp_increment(env, true_pose, true_inc, est_inc)
        new_true = true_pose.compose(true_inc)
        moved = math.hypot(new_true.x - true_pose.x, new_true.y - true_pose.y)

        # Stall guard: persistent blockage marks the pursued cell untraversable.
        if cmd.translation_norm > 1e-3 and moved < 1e-3:
            stuck += 1
            if stuck >= 30:
                stuck = 0
                gcell = target_cell or grid.cell_of(*est_pose.apply(goal))
                blocked.add(gcell)
        elif moved > 1e-3:
            stuck = 0

        true_pose = new_true
        est_pose = est_pose.compose(est_inc)
        tracker.advance(moved)
        true_poses.append(true_pose)
        est_poses.append(est_pose)
        cum_dist.append(cum_dist[-1] + moved)

        scan = _scan_and_mark(env, true_pose, config, tracker)
        scans.append(scan)
        if with_lc:
            constraints.append(
                bg.Se2Constraint(len(est_poses) - 2, len(est_poses) - 1, est_inc)
            )
            match = place_recognition_oracle(true_poses, cum_dist, len(true_poses) - 1, config.d_pr, env)
            if match is not None:
                constraints.append(bg.Se2Constraint(match[0], len(est_poses) - 1, match[1]))
                pr_events.append((match[0], len(est_poses) - 1))
                optimized = bg.optimize_pose_graph(est_poses, constraints)
                delta = max(
                    max(abs(a.x - b.x), abs(a.y - b.y), abs(wrap_angle(a.theta - b.theta)))
                    for a, b in zip(est_poses, optimized)
                )
                est_poses = optimized
                est_pose = est_poses[-1]
                if delta > 1e-12:
                    grid = bg.rebuild_grid(scans, est_poses, config.cell_size)
                else:
                    bg.integrate_scan(grid, est_pose, scan)
                trace.append((cum_dist[-1], tracker.coverage_ratio()))
                continue
        bg.integrate_scan(grid, est_pose, scan)
        trace.append((cum_dist[-1], tracker.coverage_ratio()))
        if on_step is not None:
            on_step(steps, RunArtifacts(env, tracker, true_poses, pr_events, grid=grid))

    return _finish(
        config, tracker, believed_complete, steps, trace,
        RunArtifacts(env, tracker, true_poses, pr_events, grid=grid) if keep_artifacts else None,
    )
