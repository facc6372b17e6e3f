"""Occupancy grid geometry: coordinates, Bresenham rays, view masks, scan updates.

Cells are indexed ``(row, col)``. World ``x`` runs along columns and world
``y`` along rows, so a heading of 0 points toward increasing column and
``pi/2`` toward increasing row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import OutOfBounds

TWO_PI = 2.0 * math.pi


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


class GridIndex(NamedTuple):
    row: int
    col: int


def normalize_angle(theta: float) -> float:
    """Wrap an angle into ``[-pi, pi)``."""
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # float modulo can land exactly on +pi for inputs just below -pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))


@dataclass
class OccupancyGrid:
    height: int
    width: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    cells: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.cells is None:
            self.cells = np.full((self.height, self.width), CellState.UNKNOWN, dtype=np.int8)
        elif self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} != {(self.height, self.width)}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def state(self, idx: Sequence[int]) -> CellState:
        return CellState(int(self.cells[idx[0], idx[1]]))

    def occupied_mask(self) -> np.ndarray:
        return self.cells == CellState.OCCUPIED

    def free_mask(self) -> np.ndarray:
        return self.cells == CellState.FREE

    def known_mask(self) -> np.ndarray:
        return self.cells != CellState.UNKNOWN

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.height, self.width, self.resolution, self.origin, self.cells.copy())

    @classmethod
    def from_obstacles(cls, obstacle: np.ndarray, resolution: float,
                       origin: tuple[float, float] = (0.0, 0.0)) -> "OccupancyGrid":
        """Fully known grid from a boolean obstacle mask."""
        cells = np.where(obstacle, CellState.OCCUPIED, CellState.FREE).astype(np.int8)
        return cls(obstacle.shape[0], obstacle.shape[1], resolution, origin, cells)


def world_to_grid(point, grid: OccupancyGrid) -> GridIndex:
    """Cell containing a world point (floor binning)."""
    x, y = (point.x, point.y) if isinstance(point, Pose) else point
    fc = (x - grid.origin[0]) / grid.resolution
    fr = (y - grid.origin[1]) / grid.resolution
    if not (0.0 <= fr < grid.height and 0.0 <= fc < grid.width):
        raise OutOfBounds(f"point ({x}, {y}) outside grid")
    return GridIndex(int(math.floor(fr)), int(math.floor(fc)))


def grid_to_world(idx: Sequence[int], grid: OccupancyGrid) -> tuple[float, float]:
    """World coordinates of a cell center."""
    row, col = idx
    return (grid.origin[0] + (col + 0.5) * grid.resolution,
            grid.origin[1] + (row + 0.5) * grid.resolution)


# ---------------------------------------------------------------------------
# Bresenham lines
#
# At every step along the major axis the minor coordinate is the one nearest
# the ideal line; exact half-way ties go to the larger minor index. The rule
# does not depend on direction, so a line and its reverse cover the same cells.


def bresenham(start: Sequence[int], end: Sequence[int]) -> list[GridIndex]:
    r0, c0 = int(start[0]), int(start[1])
    r1, c1 = int(end[0]), int(end[1])
    dr, dc = r1 - r0, c1 - c0
    steps = max(abs(dr), abs(dc))
    if steps == 0:
        return [GridIndex(r0, c0)]
    row_major = abs(dr) > abs(dc)
    step_major = (1 if dr > 0 else -1) if row_major else (1 if dc > 0 else -1)
    d_minor = dc if row_major else dr
    two_l = 2 * steps
    # minor offset at step k is floor((2*k*d_minor + steps) / (2*steps))
    q, rem = 0, steps
    cells = []
    for k in range(steps + 1):
        if row_major:
            cells.append(GridIndex(r0 + step_major * k, c0 + q))
        else:
            cells.append(GridIndex(r0 + q, c0 + step_major * k))
        rem += 2 * d_minor
        while rem >= two_l:
            q += 1
            rem -= two_l
        while rem < 0:
            q -= 1
            rem += two_l
    return cells


def bresenham_offsets(dr: np.ndarray, dc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised line cells from the origin to each ``(dr, dc)`` offset.

    Returns ``(rows, cols, valid)`` of shape ``(K, Lmax + 1)``; column ``k``
    holds step ``k`` of each line and ``valid`` masks steps past its end.
    """
    dr = np.asarray(dr, dtype=np.int64)
    dc = np.asarray(dc, dtype=np.int64)
    length = np.maximum(np.abs(dr), np.abs(dc))
    lmax = int(length.max()) if length.size else 0
    k = np.arange(lmax + 1, dtype=np.int64)[None, :]
    L = np.maximum(length, 1)[:, None]
    row_major = (np.abs(dr) > np.abs(dc))[:, None]
    sgn_r = np.sign(dr)[:, None]
    sgn_c = np.sign(dc)[:, None]
    minor_r = (2 * k * dr[:, None] + L) // (2 * L)
    minor_c = (2 * k * dc[:, None] + L) // (2 * L)
    rows = np.where(row_major, sgn_r * k, minor_r)
    cols = np.where(row_major, minor_c, sgn_c * k)
    valid = k <= length[:, None]
    return rows, cols, valid


class RayResult(NamedTuple):
    traversed: list[GridIndex]
    blocked_at: GridIndex | None


def raycast(grid: OccupancyGrid, start: Sequence[int], end: Sequence[int]) -> RayResult:
    """Walk the line from ``start`` to ``end``; only Occupied cells block."""
    for p in (start, end):
        if not grid.in_bounds(p[0], p[1]):
            raise OutOfBounds(f"ray endpoint {tuple(p)} outside grid")
    traversed = []
    for cell in bresenham(start, end):
        traversed.append(cell)
        if grid.cells[cell] == CellState.OCCUPIED:
            return RayResult(traversed, cell)
    return RayResult(traversed, None)


# ---------------------------------------------------------------------------
# Visibility


@dataclass(frozen=True)
class ViewMask:
    origin_pose: Pose
    visible: frozenset

    def __contains__(self, idx) -> bool:
        return tuple(idx) in self.visible

    def __len__(self) -> int:
        return len(self.visible)

    def as_array(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        for r, c in self.visible:
            out[r, c] = True
        return out


@lru_cache(maxsize=16)
def _ray_table(radius: int):
    """Offsets within a square of half-width ``radius`` and their blocking steps.

    For each offset the blocking steps are the line cells from the origin up to
    but excluding the target. Padded steps point at offset (0, 0) and are
    flagged invalid.
    """
    span = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    dr, dc = dr.ravel(), dc.ravel()
    rows, cols, valid = bresenham_offsets(dr, dc)
    length = np.maximum(np.abs(dr), np.abs(dc))
    steps = np.arange(rows.shape[1])[None, :]
    blocking = steps < length[:, None]
    rows = np.where(blocking, rows, 0)
    cols = np.where(blocking, cols, 0)
    for arr in (dr, dc, rows, cols, blocking):
        arr.setflags(write=False)
    return dr, dc, rows, cols, blocking


def visible_cells(occupied: np.ndarray, resolution: float, origin: tuple[float, float],
                  pose: Pose, fov: float, max_range: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows and cols visible from ``pose`` given a boolean obstacle mask.

    Array form of :func:`visibility_mask`; results are in row-major order.
    """
    height, width = occupied.shape
    fc = (pose.x - origin[0]) / resolution
    fr = (pose.y - origin[1]) / resolution
    if not (0.0 <= fr < height and 0.0 <= fc < width):
        raise OutOfBounds(f"pose ({pose.x}, {pose.y}) outside grid")
    r0, c0 = int(math.floor(fr)), int(math.floor(fc))
    range_cells = max_range / resolution
    radius = int(math.ceil(range_cells)) + 1
    dr, dc, step_r, step_c, blocking = _ray_table(radius)

    rows = r0 + dr
    cols = c0 + dc
    # distance and bearing are measured to cell centers from the continuous pose
    ddx = cols + 0.5 - fc
    ddy = rows + 0.5 - fr
    keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    keep &= ddx * ddx + ddy * ddy <= range_cells * range_cells
    if fov < TWO_PI:
        bearing = np.arctan2(ddy, ddx) - pose.theta
        bearing = (bearing + math.pi) % TWO_PI - math.pi
        keep &= np.abs(bearing) <= fov / 2.0
    is_origin = (dr == 0) & (dc == 0)
    keep |= is_origin
    idx = np.flatnonzero(keep)

    gr = r0 + step_r[idx]
    gc = c0 + step_c[idx]
    hits = occupied[gr, gc] & blocking[idx]
    visible = ~hits.any(axis=1)
    idx = idx[visible]
    return rows[idx], cols[idx]


def visibility_mask(grid: OccupancyGrid, pose: Pose, fov: float, max_range: float) -> ViewMask:
    if not (0.0 < fov <= TWO_PI + 1e-12):
        raise ValueError("fov must lie in (0, 2*pi]")
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    rows, cols = visible_cells(grid.occupied_mask(), grid.resolution, grid.origin,
                               pose, fov, max_range)
    return ViewMask(pose, frozenset(GridIndex(int(r), int(c)) for r, c in zip(rows, cols)))


# ---------------------------------------------------------------------------
# Occupancy updates


@dataclass(frozen=True)
class Beam:
    bearing: float
    distance: float
    hit: bool


@dataclass(frozen=True)
class RangeScan:
    beams: tuple[Beam, ...]
    max_range: float

    def __len__(self) -> int:
        return len(self.beams)


def _clip_to_rect(x0: float, y0: float, dx: np.ndarray, dy: np.ndarray, dist: np.ndarray,
                  xmax: float, ymax: float) -> np.ndarray:
    """Largest ``t <= dist`` keeping ``(x0 + t*dx, y0 + t*dy)`` inside ``[0, xmax) x [0, ymax)``."""
    eps = 1e-9
    t = dist.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tx = np.where(dx > 0, (xmax - eps - x0) / dx, np.where(dx < 0, x0 / -dx, np.inf))
        ty = np.where(dy > 0, (ymax - eps - y0) / dy, np.where(dy < 0, y0 / -dy, np.inf))
    return np.maximum(np.minimum(t, np.minimum(tx, ty)), 0.0)


def update_occupancy(grid: OccupancyGrid, pose: Pose, scan: RangeScan) -> OccupancyGrid:
    """Integrate a range scan in place and return the grid.

    Cells before each hit become Free, the hit cell Occupied. Occupied cells
    never revert to Free.
    """
    start = world_to_grid(pose, grid)
    if not scan.beams:
        return grid
    fx = (pose.x - grid.origin[0]) / grid.resolution
    fy = (pose.y - grid.origin[1]) / grid.resolution
    ang = pose.theta + np.array([b.bearing for b in scan.beams])
    beam_hit = np.array([b.hit for b in scan.beams])
    # nudge hits past the cell face so round-off cannot land one cell short
    dist = np.array([b.distance for b in scan.beams]) / grid.resolution + np.where(beam_hit, 1e-6, 0.0)
    dx, dy = np.cos(ang), np.sin(ang)
    t = _clip_to_rect(fx, fy, dx, dy, dist, grid.width, grid.height)
    hit = beam_hit & ~(t < dist - 1e-9)
    end_r = np.clip(np.floor(fy + t * dy).astype(np.int64), 0, grid.height - 1)
    end_c = np.clip(np.floor(fx + t * dx).astype(np.int64), 0, grid.width - 1)

    rows, cols, valid = bresenham_offsets(end_r - start.row, end_c - start.col)
    rows = rows + start.row
    cols = cols + start.col
    length = np.maximum(np.abs(end_r - start.row), np.abs(end_c - start.col))
    is_end = np.arange(rows.shape[1])[None, :] == length[:, None]
    free_sel = valid & ~(is_end & hit[:, None])
    cells = grid.cells
    fr, fc = rows[free_sel], cols[free_sel]
    cells[fr, fc] = np.where(cells[fr, fc] == CellState.OCCUPIED, CellState.OCCUPIED, CellState.FREE)
    hr, hc = end_r[hit], end_c[hit]
    cells[hr, hc] = CellState.OCCUPIED
    return grid


def traversable_mask(grid: OccupancyGrid, inflation: int = 0) -> np.ndarray:
    """Free cells farther than ``inflation`` (Chebyshev) from any Occupied cell."""
    free = grid.cells == CellState.FREE
    if inflation <= 0:
        return free
    near = ndimage.maximum_filter(grid.occupied_mask(), size=2 * inflation + 1,
                                  mode="constant", cval=False)
    return free & ~near
