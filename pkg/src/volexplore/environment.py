"""Ground-truth grid world: map loading, depth-sensor ray casting, line of sight.

World frame: cell (col, row) occupies [col, col+1) x [row, row+1) * cell_size
meters, with row 0 at the bottom. Map files are read top line first, so the
first text line is the top row of the world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom2d import Pose2

try:  # Compiled DDA; the scalar loop below stays as reference/fallback.
    from ._fastgeom import cast_rays as _cast_rays
except Exception:  # pragma: no cover - exercised only without numba
    _cast_rays = None


class MapFormatError(ValueError):
    pass


class SimulationIntegrityError(RuntimeError):
    pass


class GridEnvironment:
    """Immutable boolean occupancy grid (True = occupied)."""

    def __init__(self, occupancy: np.ndarray, cell_size: float = 1.0):
        occ = np.asarray(occupancy, dtype=bool)
        if occ.ndim != 2:
            raise MapFormatError("occupancy must be 2D")
        if not (occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all()):
            raise MapFormatError("environment border must be fully occupied")
        if occ.all():
            raise MapFormatError("environment has no free cell")
        self.occupancy = occ
        self.occupancy.setflags(write=False)
        self.cell_size = float(cell_size)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def is_occupied_cell(self, col: int, row: int) -> bool:
        if not (0 <= row < self.height and 0 <= col < self.width):
            return True
        return bool(self.occupancy[row, col])

    def is_free_point(self, x: float, y: float) -> bool:
        col, row = self.cell_of(x, y)
        return not self.is_occupied_cell(col, row)

    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.occupancy)
        return [(int(c), int(r)) for r, c in zip(rows, cols)]


def load_environment(text: str, cell_size: float = 1.0) -> GridEnvironment:
    """Parse an ASCII map ('#' occupied, '.' free); first line is the top row."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapFormatError("empty map")
    width = len(lines[0])
    rows = []
    for i, line in enumerate(lines):
        if len(line) != width:
            raise MapFormatError(f"line {i + 1}: length {len(line)} != {width} (map must be rectangular)")
        bad = set(line) - {"#", "."}
        if bad:
            raise MapFormatError(f"line {i + 1}: illegal character {sorted(bad)[0]!r}")
        rows.append([ch == "#" for ch in line])
    occ = np.array(rows[::-1], dtype=bool)  # flip so row 0 is the bottom
    try:
        return GridEnvironment(occ, cell_size)
    except MapFormatError as e:
        raise MapFormatError(str(e)) from None


@dataclass
class DepthScan:
    """Depth samples taken simultaneously from one pose.

    Angles are relative to the robot heading, strictly increasing and
    spanning the FOV symmetrically. hit=False implies depth == max_range.
    """

    origin_pose: Pose2
    angles: np.ndarray
    hits: np.ndarray
    depths: np.ndarray
    max_range: float

    def __post_init__(self):
        if len(self.angles) < 2:
            raise ValueError("scan needs at least 2 rays")

    @property
    def n_rays(self) -> int:
        return len(self.angles)

    def local_points(self) -> np.ndarray:
        """Sample endpoints in the robot frame (heading = +x)."""
        return np.stack(
            [self.depths * np.cos(self.angles), self.depths * np.sin(self.angles)], axis=1
        )


def _trace_ray(env, ox, oy, dx, dy, max_range, visited):
    """Exact DDA walk; returns (hit, depth). Appends traversed free cells."""
    cs = env.cell_size
    col = int(math.floor(ox / cs))
    row = int(math.floor(oy / cs))

    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    inf = math.inf
    if dx != 0.0:
        t_dx = abs(cs / dx)
        nx = (col + (1 if dx > 0 else 0)) * cs
        t_max_x = (nx - ox) / dx
    else:
        t_dx = inf
        t_max_x = inf
    if dy != 0.0:
        t_dy = abs(cs / dy)
        ny = (row + (1 if dy > 0 else 0)) * cs
        t_max_y = (ny - oy) / dy
    else:
        t_dy = inf
        t_max_y = inf

    if visited is not None:
        visited.add((col, row))
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
            return False, max_range
        if env.is_occupied_cell(col, row):
            return True, t
        if visited is not None:
            visited.add((col, row))


def cast_scan(
    env: GridEnvironment,
    pose: Pose2,
    fov: float,
    max_range: float,
    n_rays: int,
    visited_cells: set | None = None,
) -> DepthScan:
    """Cast n_rays evenly over [-fov/2, +fov/2] about the heading.

    Depths are exact distances to the first occupied-cell boundary. If
    visited_cells is given, every traversed free cell is added to it.
    """
    if n_rays < 2:
        raise ValueError("n_rays must be >= 2")
    col, row = env.cell_of(pose.x, pose.y)
    if env.is_occupied_cell(col, row):
        raise SimulationIntegrityError(f"sensor pose ({pose.x:.3f}, {pose.y:.3f}) is inside an occupied cell")

    rel = np.linspace(-fov / 2.0, fov / 2.0, n_rays)
    if _cast_rays is not None:
        hits, depths, vis = _cast_rays(
            env.occupancy, env.cell_size, pose.x, pose.y, pose.theta, rel, max_range
        )
        if visited_cells is not None:
            rr, cc = np.nonzero(vis)
            visited_cells.update(zip(cc.tolist(), rr.tolist()))
        return DepthScan(pose, rel, hits, depths, max_range)
    hits = np.empty(n_rays, dtype=bool)
    depths = np.empty(n_rays, dtype=float)
    for i, a in enumerate(rel):
        ang = pose.theta + a
        hit, depth = _trace_ray(env, pose.x, pose.y, math.cos(ang), math.sin(ang), max_range, visited_cells)
        hits[i] = hit
        depths[i] = depth
    return DepthScan(pose, rel, hits, depths, max_range)


def line_of_sight(env: GridEnvironment, a, b) -> bool:
    """True iff the open segment a-b crosses no occupied cell.

    Exact corner crossings step diagonally, so grazing a corner between two
    occupied cells does not block.
    """
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    dist = math.hypot(dx, dy)
    if dist <= 1e-12:
        return not env.is_occupied_cell(*env.cell_of(ax, ay))
    cs = env.cell_size
    col = int(math.floor(ax / cs))
    row = int(math.floor(ay / cs))
    end_col = int(math.floor(bx / cs))
    end_row = int(math.floor(by / cs))

    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    inf = math.inf
    if dx != 0.0:
        t_dx = abs(cs / dx)
        t_max_x = (((col + (1 if dx > 0 else 0)) * cs) - ax) / dx
    else:
        t_dx = inf
        t_max_x = inf
    if dy != 0.0:
        t_dy = abs(cs / dy)
        t_max_y = (((row + (1 if dy > 0 else 0)) * cs) - ay) / dy
    else:
        t_dy = inf
        t_max_y = inf

    if env.is_occupied_cell(col, row):
        return False
    while (col, row) != (end_col, end_row):
        if abs(t_max_x - t_max_y) <= 1e-12:
            # Exact corner: step diagonally.
            t_max_x += t_dx
            t_max_y += t_dy
            col += step_x
            row += step_y
        elif t_max_x < t_max_y:
            if t_max_x >= 1.0:
                break
            t_max_x += t_dx
            col += step_x
        else:
            if t_max_y >= 1.0:
                break
            t_max_y += t_dy
            row += step_y
        if env.is_occupied_cell(col, row):
            return False
    return True
