"""Global occupancy-grid baselines.

A tri-state grid built from an exact depth sensor: per scan, cells hit by a
ray become occupied, cells fully contained in the sensor polygon become free
and everything else contributes nothing. Log-odds accumulation under that
sensor model degenerates to "the latest definite measurement wins", which is
what the incremental update implements. The loop-closing variant re-optimizes
an SE(2) pose graph on every place recognition and re-integrates all scans.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import DepthScan
from .geom2d import Pose2, points_in_polygon, wrap_angle
from .local_volume import scan_polygon_vertices

FREE = 0
OCCUPIED = 1
# Unknown cells are simply absent from the store (P = 0.5, log-odds 0).


class OccupancyGrid:
    """Sparse tri-state grid; cell (col, row) covers [col, col+1) x [row, row+1)."""

    def __init__(self, cell_size: float = 1.0):
        self.cell_size = float(cell_size)
        self.cells: dict[tuple[int, int], int] = {}

    def state(self, cell) -> int | None:
        return self.cells.get(cell)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.cell_size)
        g.cells = dict(self.cells)
        return g


def integrate_scan(grid: OccupancyGrid, est_pose: Pose2, scan: DepthScan):
    """Apply one measurement at the estimated pose (later overrides earlier)."""
    cs = grid.cell_size
    verts = est_pose.apply_many(scan_polygon_vertices(scan))

    # Cells whose 4 corners all lie inside the sensor polygon become free.
    c0 = int(math.floor(verts[:, 0].min() / cs))
    c1 = int(math.floor(verts[:, 0].max() / cs))
    r0 = int(math.floor(verts[:, 1].min() / cs))
    r1 = int(math.floor(verts[:, 1].max() / cs))
    xs = np.arange(c0, c1 + 2) * cs
    ys = np.arange(r0, r1 + 2) * cs
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    corners_in = points_in_polygon(
        np.stack([gx.ravel(), gy.ravel()], axis=1), verts
    ).reshape(gx.shape)
    full = corners_in[:-1, :-1] & corners_in[1:, :-1] & corners_in[:-1, 1:] & corners_in[1:, 1:]
    for i, j in zip(*np.nonzero(full)):
        grid.cells[(c0 + int(i), r0 + int(j))] = FREE

    # Cells containing a ray hit become occupied (within-scan override too).
    for ang, hit, depth in zip(scan.angles, scan.hits, scan.depths):
        if not hit:
            continue
        a = est_pose.theta + ang
        # Nudge past the boundary so the point lands inside the hit cell.
        d = depth + 1e-6
        hx = est_pose.x + d * math.cos(a)
        hy = est_pose.y + d * math.sin(a)
        grid.cells[grid.cell_of(hx, hy)] = OCCUPIED


def grid_frontiers(grid: OccupancyGrid, blocked=frozenset()) -> list[tuple[int, int]]:
    """Free cells 4-adjacent to at least one unknown cell."""
    out = []
    for (c, r), state in grid.cells.items():
        if state != FREE or (c, r) in blocked:
            continue
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if (c + dc, r + dr) not in grid.cells:
                out.append((c, r))
                break
    out.sort()
    return out


def grid_plan(grid: OccupancyGrid, est_position, blocked=frozenset()):
    """Dijkstra over 8-connected free cells to the nearest frontier cell.

    Returns the path as a list of cells, or None if no frontier is reachable.
    The robot's own cell is traversable regardless of its state.
    """
    start = grid.cell_of(*est_position)
    frontier_set = set(grid_frontiers(grid, blocked))
    if not frontier_set:
        return None
    dist = {start: 0.0}
    parent = {start: None}
    heap = [(0.0, start)]
    done = set()
    diag = math.sqrt(2.0)
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell in frontier_set:
            path = [cell]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        c, r = cell
        for dc in (-1, 0, 1):
            for dr in (-1, 0, 1):
                if dc == 0 and dr == 0:
                    continue
                nb = (c + dc, r + dr)
                if nb in done or nb in blocked:
                    continue
                if grid.cells.get(nb) != FREE:
                    continue
                nd = d + (diag if dc and dr else 1.0) * grid.cell_size
                if nb not in dist or nd < dist[nb]:
                    dist[nb] = nd
                    parent[nb] = cell
                    heapq.heappush(heap, (nd, nb))
    return None


@dataclass
class Se2Constraint:
    i: int
    j: int
    z: Pose2
    information: np.ndarray | None = None  # 3x3 SPD; identity if None

    def info(self) -> np.ndarray:
        if self.information is None:
            return np.eye(3)
        info = np.asarray(self.information, dtype=float)
        if info.shape != (3, 3) or not np.allclose(info, info.T):
            raise ValueError("information matrix must be symmetric 3x3")
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            raise ValueError("information matrix must be positive definite")
        return info


def _residual(xi: np.ndarray, xj: np.ndarray, z: Pose2) -> np.ndarray:
    ci, si = math.cos(xi[2]), math.sin(xi[2])
    dx = xj[0] - xi[0]
    dy = xj[1] - xi[1]
    # inv(Xi) * Xj
    tx = ci * dx + si * dy
    ty = -si * dx + ci * dy
    cz, sz = math.cos(z.theta), math.sin(z.theta)
    ex = cz * (tx - z.x) + sz * (ty - z.y)
    ey = -sz * (tx - z.x) + cz * (ty - z.y)
    et = wrap_angle(xj[2] - xi[2] - z.theta)
    return np.array([ex, ey, et])


def _jacobians(xi, xj, z):
    ci, si = math.cos(xi[2]), math.sin(xi[2])
    dx = xj[0] - xi[0]
    dy = xj[1] - xi[1]
    Rz = np.array([[math.cos(z.theta), -math.sin(z.theta)], [math.sin(z.theta), math.cos(z.theta)]])
    Ri = np.array([[ci, -si], [si, ci]])
    dRiT = np.array([[-si, ci], [-ci, -si]])  # d(Ri^T)/dtheta
    A = np.zeros((3, 3))
    B = np.zeros((3, 3))
    RzT_RiT = Rz.T @ Ri.T
    A[:2, :2] = -RzT_RiT
    A[:2, 2] = Rz.T @ (dRiT @ np.array([dx, dy]))
    A[2, 2] = -1.0
    B[:2, :2] = RzT_RiT
    B[2, 2] = 1.0
    return A, B


def optimize_pose_graph(
    poses: list[Pose2],
    constraints: list[Se2Constraint],
    max_iterations: int = 100,
    cost_tol: float = 1e-9,
    step_tol: float = 1e-10,
) -> list[Pose2]:
    """Levenberg-Marquardt over SE(2); pose 0 is held fixed (gauge)."""
    if not poses:
        raise ValueError("need at least one pose")
    infos = [c.info() for c in constraints]
    n = len(poses)
    x = np.array([[p.x, p.y, p.theta] for p in poses], dtype=float)
    if n == 1 or not constraints:
        return list(poses)

    def total_cost(xv):
        cost = 0.0
        for c, info in zip(constraints, infos):
            e = _residual(xv[c.i], xv[c.j], c.z)
            cost += float(e @ info @ e)
        return cost

    lam = 1e-6
    cost = total_cost(x)
    for _ in range(max_iterations):
        rows, cols, vals = [], [], []
        b = np.zeros(3 * n)
        for c, info in zip(constraints, infos):
            e = _residual(x[c.i], x[c.j], c.z)
            A, B = _jacobians(x[c.i], x[c.j], c.z)
            for bi, J in ((c.i, A), (c.j, B)):
                b[3 * bi : 3 * bi + 3] += J.T @ info @ e
                for bj, K in ((c.i, A), (c.j, B)):
                    blk = J.T @ info @ K
                    for r in range(3):
                        for s in range(3):
                            rows.append(3 * bi + r)
                            cols.append(3 * bj + s)
                            vals.append(blk[r, s])
        H = sp.coo_matrix((vals, (rows, cols)), shape=(3 * n, 3 * n)).tocsr()
        H = H + sp.eye(3 * n) * lam
        # Gauge: clamp pose 0 by overwriting its block with identity.
        H = H.tolil()
        H[:3, :] = 0.0
        H[:3, :3] = np.eye(3) * 1.0
        b[:3] = 0.0
        dx = spla.spsolve(H.tocsr(), -b)
        step = dx.reshape(n, 3)
        x_new = x + step
        x_new[:, 2] = np.array([wrap_angle(t) for t in x_new[:, 2]])
        new_cost = total_cost(x_new)
        if new_cost <= cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            x = x_new
            lam = max(lam * 0.5, 1e-12)
            converged = rel < cost_tol or float(np.linalg.norm(dx)) < step_tol
            cost = new_cost
            if converged:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return [Pose2(t, px, py) for px, py, t in x]


def rebuild_grid(scans: list[DepthScan], poses: list[Pose2], cell_size: float = 1.0) -> OccupancyGrid:
    """Fresh grid with every scan re-integrated in chronological order."""
    if len(scans) != len(poses):
        raise ValueError("one pose per scan required")
    grid = OccupancyGrid(cell_size)
    for scan, pose in zip(scans, poses):
        integrate_scan(grid, pose, scan)
    return grid


def export_g2o(poses: list[Pose2], constraints: list[Se2Constraint]) -> str:
    """2D pose graph in the de-facto text format (VERTEX_SE2 / EDGE_SE2)."""
    lines = []
    for i, p in enumerate(poses):
        lines.append(f"VERTEX_SE2 {i} {p.x!r} {p.y!r} {p.theta!r}")
    for c in constraints:
        info = c.info()
        upper = [info[r, s] for r in range(3) for s in range(r, 3)]
        vals = " ".join(repr(v) for v in upper)
        lines.append(f"EDGE_SE2 {c.i} {c.j} {c.z.x!r} {c.z.y!r} {c.z.theta!r} {vals}")
    return "\n".join(lines) + "\n"
