import math

import numpy as np
import pytest

from oracles import dijkstra_cost, random_grid
from semexplore.errors import InvalidEndpoint, NoPath, PathBlocked
from semexplore.gridmap import CellState, GridIndex, OccupancyGrid, Pose, grid_to_world
from semexplore.planner import Path, RobotState, advance, distance_field, plan


def grid_from(occupied, res=1.0):
    return OccupancyGrid.from_obstacles(np.asarray(occupied, dtype=bool), res)


def random_instance(seed, n=10, density=0.2):
    rng = np.random.default_rng(seed)
    occ = random_grid(rng, n, n, density)
    free = np.argwhere(~occ)
    a, b = rng.choice(len(free), size=2, replace=False)
    return occ, tuple(free[a]), tuple(free[b])


class TestPlan:
    def test_straight_corridor(self):
        occ = np.ones((3, 9), dtype=bool)
        occ[1, 1:8] = False
        path = plan(grid_from(occ), (1, 1), (1, 7))
        assert path.waypoints == tuple(GridIndex(1, c) for c in range(1, 8))
        assert path.cost == 6

    def test_wall_blocks(self):
        occ = np.zeros((5, 5), dtype=bool)
        occ[:, 2] = True
        with pytest.raises(NoPath):
            plan(grid_from(occ), (0, 0), (4, 4))

    def test_endpoints_must_be_free(self):
        g = grid_from(np.zeros((4, 4), dtype=bool))
        g.cells[3, 3] = CellState.UNKNOWN
        g.cells[0, 3] = CellState.OCCUPIED
        with pytest.raises(InvalidEndpoint):
            plan(g, (0, 0), (3, 3))
        with pytest.raises(InvalidEndpoint):
            plan(g, (0, 3), (0, 0))

    def test_unknown_untraversable(self):
        g = grid_from(np.zeros((3, 5), dtype=bool))
        g.cells[:, 2] = CellState.UNKNOWN
        with pytest.raises(NoPath):
            plan(g, (1, 0), (1, 4))

    def test_inflation_closes_gap(self):
        occ = np.zeros((7, 7), dtype=bool)
        occ[3, :] = True
        occ[3, 3] = False
        g = grid_from(occ)
        assert plan(g, (0, 3), (6, 3)).cost == 6
        with pytest.raises(NoPath):
            plan(g, (0, 3), (6, 3), inflation=1)

    def test_start_inside_inflation_can_leave(self):
        occ = np.zeros((6, 6), dtype=bool)
        occ[0, 0] = True
        path = plan(grid_from(occ), (1, 1), (4, 4), inflation=1)
        assert path.waypoints[0] == (1, 1) and path.goal == (4, 4)

    def test_matches_dijkstra_oracle(self):
        checked = 0
        for seed in range(100):
            occ, s, t = random_instance(seed)
            expected = dijkstra_cost(~occ, s, t)
            if expected is None:
                with pytest.raises(NoPath):
                    plan(grid_from(occ), s, t)
                continue
            path = plan(grid_from(occ), s, t)
            assert path.cost == expected
            checked += 1
        assert checked > 50

    def test_path_invariants(self):
        for seed in range(30):
            occ, s, t = random_instance(seed, 12)
            try:
                path = plan(grid_from(occ), s, t)
            except NoPath:
                continue
            wps = path.waypoints
            assert wps[0] == s and wps[-1] == t
            assert len(set(wps)) == len(wps)
            assert not any(occ[w] for w in wps)
            for a, b in zip(wps, wps[1:]):
                assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1

    def test_deterministic(self):
        g = grid_from(np.zeros((8, 8), dtype=bool))
        assert plan(g, (0, 0), (5, 7)) == plan(g, (0, 0), (5, 7))


class TestDistanceField:
    def test_agrees_with_plan(self):
        for seed in range(20):
            occ, s, _ = random_instance(seed, 10)
            g = grid_from(occ)
            field = distance_field(g, s)
            for t in map(tuple, np.argwhere(~occ)[::7]):
                expected = dijkstra_cost(~occ, s, t)
                if expected is None:
                    assert math.isinf(field[t])
                else:
                    assert field[t] == pytest.approx(expected, abs=1e-9)


def robot_at(cell, theta=0.0):
    return RobotState(Pose(cell[1] + 0.5, cell[0] + 0.5, theta), 0)


class TestAdvance:
    def setup_method(self):
        self.grid = grid_from(np.zeros((6, 6), dtype=bool))
        self.path = Path((GridIndex(1, 1), GridIndex(2, 2), GridIndex(2, 3)), goal_theta=math.pi / 2)

    def test_step(self):
        s = advance(robot_at((1, 1)), self.path, self.grid)
        assert (s.pose.x, s.pose.y) == grid_to_world((2, 2), self.grid)
        assert s.pose.theta == pytest.approx(math.pi / 4)
        assert s.tick == 1
        s = advance(s, self.path, self.grid)
        assert s.pose.theta == 0.0 and s.tick == 2

    def test_terminal_alignment(self):
        s = advance(robot_at((2, 3)), self.path, self.grid)
        assert s.pose.theta == pytest.approx(math.pi / 2)
        assert (s.pose.x, s.pose.y) == (3.5, 2.5)

    def test_blocked_after_update(self):
        s = advance(robot_at((1, 1)), self.path, self.grid)
        self.grid.cells[2, 3] = CellState.OCCUPIED
        with pytest.raises(PathBlocked):
            advance(s, self.path, self.grid)

    def test_reaches_goal_within_free_count(self):
        occ, s, t = random_instance(3, 12)
        g = grid_from(occ)
        path = plan(g, s, t)
        state = robot_at(s)
        for _ in range(int((~occ).sum())):
            if state.pose.x == t[1] + 0.5 and state.pose.y == t[0] + 0.5:
                break
            state = advance(state, path, g)
            assert not occ[int(state.pose.y), int(state.pose.x)]
        assert (int(state.pose.y), int(state.pose.x)) == t
