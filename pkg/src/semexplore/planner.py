"""A* planning on the occupancy grid and the one-cell-per-tick motion model."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InvalidEndpoint, NoPath, OutOfBounds, PathBlocked
from .gridmap import CellState, GridIndex, OccupancyGrid, Pose, grid_to_world, traversable_mask

SQRT2 = math.sqrt(2.0)
NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def octile(a, b) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


@dataclass(frozen=True)
class Path:
    waypoints: tuple[GridIndex, ...]
    goal_theta: float | None = None

    def __len__(self) -> int:
        return len(self.waypoints)

    def step_counts(self) -> tuple[int, int]:
        """Number of (cardinal, diagonal) moves."""
        card = diag = 0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a[0] != b[0] and a[1] != b[1]:
                diag += 1
            else:
                card += 1
        return card, diag

    @property
    def cost(self) -> float:
        card, diag = self.step_counts()
        return card + diag * SQRT2

    @property
    def goal(self) -> GridIndex:
        return self.waypoints[-1]


def _passable(grid: OccupancyGrid, start, inflation: int) -> np.ndarray:
    mask = traversable_mask(grid, inflation)
    # the robot may already stand inside an inflation zone; let it leave
    mask[start[0], start[1]] = grid.cells[start[0], start[1]] == CellState.FREE
    return mask


def _check_endpoint(grid: OccupancyGrid, idx, what: str) -> GridIndex:
    r, c = int(idx[0]), int(idx[1])
    if not grid.in_bounds(r, c):
        raise OutOfBounds(f"{what} {(r, c)} outside grid")
    if grid.cells[r, c] != CellState.FREE:
        raise InvalidEndpoint(f"{what} {(r, c)} is not Free")
    return GridIndex(r, c)


def plan(grid: OccupancyGrid, start, goal, inflation: int = 0,
         goal_theta: float | None = None) -> Path:
    """Cost-optimal 8-connected path; cardinal steps cost 1, diagonal sqrt(2).

    Unknown cells and cells within ``inflation`` of an obstacle are not
    traversable (the start cell is exempt from inflation). Ties in the open
    list break on ``(f, h, row, col)``.
    """
    start = _check_endpoint(grid, start, "start")
    goal = _check_endpoint(grid, goal, "goal")
    ok = _passable(grid, start, inflation)
    if not ok[goal]:
        raise NoPath(f"goal {tuple(goal)} lies inside the inflation zone")
    h, w = grid.shape
    g_cost = {start: 0.0}
    parent = {start: None}
    closed = set()
    h0 = octile(start, goal)
    heap = [(h0, h0, start[0], start[1])]
    while heap:
        _, _, r, c = heapq.heappop(heap)
        node = GridIndex(r, c)
        if node in closed:
            continue
        if node == goal:
            break
        closed.add(node)
        base = g_cost[node]
        for dr, dc in NEIGHBORS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or not ok[nr, nc]:
                continue
            nxt = GridIndex(nr, nc)
            if nxt in closed:
                continue
            g = base + (SQRT2 if dr and dc else 1.0)
            if g < g_cost.get(nxt, math.inf):
                g_cost[nxt] = g
                parent[nxt] = node
                hn = octile(nxt, goal)
                heapq.heappush(heap, (g + hn, hn, nr, nc))
    else:
        raise NoPath(f"no path from {tuple(start)} to {tuple(goal)}")
    cells = []
    node = goal
    while node is not None:
        cells.append(node)
        node = parent[node]
    return Path(tuple(reversed(cells)), goal_theta)


def distance_field(grid: OccupancyGrid, start, inflation: int = 0) -> np.ndarray:
    """Path cost from ``start`` to every cell (``inf`` where unreachable)."""
    start = _check_endpoint(grid, start, "start")
    ok = _passable(grid, start, inflation)
    h, w = grid.shape
    ids = np.arange(h * w).reshape(h, w)
    src, dst, wts = [], [], []
    for dr, dc in NEIGHBORS:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = ok[r0:r1, c0:c1] & ok[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        src.append(ids[r0:r1, c0:c1][a])
        dst.append(ids[r0 + dr:r1 + dr, c0 + dc:c1 + dc][a])
        wts.append(np.full(int(a.sum()), SQRT2 if dr and dc else 1.0))
    graph = coo_matrix((np.concatenate(wts), (np.concatenate(src), np.concatenate(dst))),
                       shape=(h * w, h * w)).tocsr()
    dist = dijkstra(graph, indices=ids[start])
    return dist.reshape(h, w)


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    tick: int = 0


def heading_between(a, b) -> float:
    """World heading of a move from cell ``a`` to cell ``b``."""
    return math.atan2(b[0] - a[0], b[1] - a[1])


def advance(state: RobotState, path: Path, grid: OccupancyGrid) -> RobotState:
    """Move one waypoint along ``path``.

    At the final waypoint the robot turns in place to the path's goal heading.
    Raises PathBlocked if the next waypoint is now Occupied.
    """
    here = GridIndex(int(math.floor((state.pose.y - grid.origin[1]) / grid.resolution)),
                     int(math.floor((state.pose.x - grid.origin[0]) / grid.resolution)))
    try:
        i = path.waypoints.index(here)
    except ValueError:
        first = path.waypoints[0]
        if max(abs(first[0] - here[0]), abs(first[1] - here[1])) > 1:
            raise ValueError(f"robot cell {tuple(here)} is not on or next to the path") from None
        i = -1
    if i == len(path.waypoints) - 1:
        theta = state.pose.theta if path.goal_theta is None else path.goal_theta
        return RobotState(Pose(state.pose.x, state.pose.y, theta), state.tick + 1)
    nxt = path.waypoints[i + 1]
    if grid.cells[nxt] == CellState.OCCUPIED:
        raise PathBlocked(f"waypoint {tuple(nxt)} is occupied")
    x, y = grid_to_world(nxt, grid)
    return RobotState(Pose(x, y, heading_between(here, nxt)), state.tick + 1)
