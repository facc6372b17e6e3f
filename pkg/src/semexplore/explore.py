"""The exploration loop and its baselines.

``run`` repeatedly samples candidate poses, picks the one whose view holds the
most uncertain (or, for the No-Score baseline, unseen) cells, drives there
while sensing every tick, and stops once no candidate scores at least ``tau``.
The frontier baseline instead drives to the nearest frontier cluster until
none remain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InvalidEndpoint, NoPath, OutOfBounds, PathBlocked, SamplingExhausted
from .gridmap import CellState, GridIndex, OccupancyGrid, Pose, update_occupancy, world_to_grid
from .harness.metrics import average_entropy, coverage
from .planner import RobotState, advance, distance_field, plan
from .sampling import (
    EIGHT_CONNECTED,
    EIGHT_HEADINGS,
    SamplerConfig,
    ScoredPose,
    importance_sample,
    reachable_set,
    select_best,
    uniform_sample,
)
from .semantics import ClassifierHead, PoseScorer, SemanticMap, fuse_observations
from .sim import (
    DEFAULT_CLASSES,
    DEFAULT_FEATURE_DIM,
    DEFAULT_TEMPERATURE,
    Environment,
    SensorSpec,
    ground_truth_classifier,
    sense_camera,
    sense_lidar,
    synthesize_prototypes,
)

MAX_PLAN_FAILURES = 5
METHODS = ("segue_us", "segue_is", "noscore_us", "noscore_is", "frontier")


class Termination(str, Enum):
    SCORE_BELOW_TAU = "ScoreBelowTau"
    MAX_TICKS = "MaxTicks"
    NO_CANDIDATES = "NoCandidates"


def default_sampler(method: str) -> SamplerConfig:
    if method.endswith("_is"):
        return SamplerConfig(n_samples=50, n_iterations=2)
    return SamplerConfig(n_samples=200, n_iterations=1)


@dataclass(frozen=True)
class ExplorationConfig:
    method: str = "segue_us"
    tau: float = 0.05
    ratio_threshold: float = 1.1
    sampler: SamplerConfig | None = None
    sensor: SensorSpec = field(default_factory=SensorSpec)
    max_ticks: int = 1500
    seed: int = 0
    inflation: int = 1
    dwell: bool = True
    n_classes: int = DEFAULT_CLASSES
    feature_dim: int = DEFAULT_FEATURE_DIM
    temperature: float = DEFAULT_TEMPERATURE
    prototype_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if not self.ratio_threshold > 1.0:
            raise ConfigError("ratio_threshold must exceed 1")
        if self.max_ticks <= 0:
            raise ConfigError("max_ticks must be positive")
        if self.inflation < 0:
            raise ConfigError("inflation must be non-negative")
        if self.sampler is None:
            object.__setattr__(self, "sampler", default_sampler(self.method))

    @property
    def scoring_mode(self) -> str:
        return "noscore" if self.method.startswith("noscore") else "semantic"

    @property
    def uses_importance_sampling(self) -> bool:
        return self.method.endswith("_is")


class TickMetrics(NamedTuple):
    tick: int
    coverage: float
    avg_entropy: float
    best_pose_score: float


class Event(NamedTuple):
    tick: int
    kind: str
    payload: dict


@dataclass
class RunResult:
    env_name: str
    config: ExplorationConfig
    trajectory: list[RobotState]
    per_tick_metrics: list[TickMetrics]
    occupancy: OccupancyGrid
    semantic: SemanticMap
    head: ClassifierHead
    termination_reason: Termination
    final_best_score: float
    events: list[Event] = field(default_factory=list)

    @property
    def ticks(self) -> int:
        return len(self.per_tick_metrics)

    @property
    def final_coverage(self) -> float:
        return self.per_tick_metrics[-1].coverage

    @property
    def final_entropy(self) -> float:
        return self.per_tick_metrics[-1].avg_entropy


# ---------------------------------------------------------------------------
# Baseline helpers


def noscore_cell_score(grid: OccupancyGrid, smap: SemanticMap, cell) -> int:
    """1 for a cell with no semantic feature, 0 otherwise."""
    r, c = cell
    if not grid.in_bounds(r, c):
        raise OutOfBounds(f"cell {tuple(cell)} outside grid")
    return 0 if smap.has_feature[r, c] else 1


@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple[GridIndex, ...]
    centroid: GridIndex


def detect_frontiers(grid: OccupancyGrid, min_size: int = 3) -> list[FrontierCluster]:
    """Free cells touching Unknown space, grouped into 8-connected clusters."""
    unknown = grid.cells == CellState.UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=EIGHT_CONNECTED)
    frontier = (grid.cells == CellState.FREE) & near_unknown
    labels, n = ndimage.label(frontier, structure=EIGHT_CONNECTED)
    clusters = []
    for k in range(1, n + 1):
        rc = np.argwhere(labels == k)
        if len(rc) < min_size:
            continue
        mr, mc = rc.mean(axis=0)
        centroid = GridIndex(int(math.floor(mr + 0.5)), int(math.floor(mc + 0.5)))
        clusters.append(FrontierCluster(tuple(GridIndex(int(r), int(c)) for r, c in rc), centroid))
    return clusters


def frontier_step(grid: OccupancyGrid, state: RobotState, inflation: int = 0,
                  exclude=frozenset()) -> GridIndex | None:
    """Goal cell for the frontier baseline, or None when exploration is done.

    Picks the cluster centroid with the lowest path cost. When no centroid is
    reachable, falls back to the nearest reachable frontier cell of any
    cluster. Cells in ``exclude`` are never returned.
    """
    clusters = detect_frontiers(grid)
    if not clusters:
        return None
    here = world_to_grid(state.pose, grid)
    dist = distance_field(grid, here, inflation)
    best, best_key = None, None
    for cl in clusters:
        c = cl.centroid
        if c in exclude or not math.isfinite(dist[c]):
            continue
        key = (dist[c], c)
        if best_key is None or key < best_key:
            best, best_key = c, key
    if best is not None:
        return best
    for cl in clusters:
        for c in cl.cells:
            if c in exclude or not math.isfinite(dist[c]):
                continue
            key = (dist[c], c)
            if best_key is None or key < best_key:
                best, best_key = c, key
    return best


# ---------------------------------------------------------------------------
# Main loop


class _Stop(Exception):
    def __init__(self, reason: Termination):
        self.reason = reason


class _Explorer:
    def __init__(self, env: Environment, config: ExplorationConfig, prior=None):
        self.env = env
        self.config = config
        self.sensor = config.sensor
        self.bank = synthesize_prototypes(config.n_classes, config.feature_dim, config.prototype_seed)
        self.head = ground_truth_classifier(self.bank, config.temperature)
        sensor_seq, sampler_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.sensor_rng = np.random.default_rng(sensor_seq)
        self.sampler_rng = np.random.default_rng(sampler_seq)
        if prior is None:
            self.grid = env.empty_grid()
            self.smap = SemanticMap.like(self.grid, config.feature_dim)
        else:
            grid, smap = prior
            self.grid, self.smap = grid.copy(), smap.copy()
        self.state = RobotState(env.start_pose, 0)
        self.trajectory: list[RobotState] = []
        self.metrics: list[TickMetrics] = []
        self.events: list[Event] = []
        self.best_score = math.nan

    # -- sensing ----------------------------------------------------------

    def log(self, kind: str, **payload):
        self.events.append(Event(self.state.tick, kind, payload))

    def sense(self):
        """Update both maps from the current pose and record the tick."""
        pose = self.state.pose
        update_occupancy(self.grid, pose, sense_lidar(self.env, pose, self.sensor))
        frame = sense_camera(self.env, pose, self.sensor, self.bank, self.sensor_rng)
        fuse_observations(self.smap, frame.rows, frame.cols, frame.features, self.head,
                          self.config.ratio_threshold)
        self.log("sense", pose=(pose.x, pose.y, pose.theta), features=len(frame))
        self.trajectory.append(self.state)
        self.metrics.append(TickMetrics(
            self.state.tick,
            coverage(self.grid, self.smap),
            average_entropy(self.grid, self.smap, self.head),
            self.best_score,
        ))

    def step_to(self, state: RobotState):
        if state.tick > self.config.max_ticks:
            raise _Stop(Termination.MAX_TICKS)
        self.state = state
        self.sense()

    def dwell(self, theta: float):
        """Turn in place through every heading, sensing at each."""
        for k in range(1, len(EIGHT_HEADINGS)):
            p = self.state.pose
            self.step_to(RobotState(Pose(p.x, p.y, theta + EIGHT_HEADINGS[k]), self.state.tick + 1))

    # -- navigation -------------------------------------------------------

    def here(self) -> GridIndex:
        return world_to_grid(self.state.pose, self.grid)

    def navigate(self, goal: GridIndex, goal_theta: float | None) -> bool:
        """Drive to ``goal`` sensing every tick; False if the goal became unreachable."""
        inflation = self.config.inflation
        try:
            path = plan(self.grid, self.here(), goal, inflation, goal_theta)
        except (NoPath, InvalidEndpoint):
            self.log("unreachable", goal=tuple(goal))
            return False
        self.log("plan", goal=tuple(goal), length=len(path))
        while True:
            here = self.here()
            if here == goal:
                return True
            nxt = path.waypoints[path.waypoints.index(here) + 1]
            if self.env.obstacle[nxt]:
                # contact with an obstacle the map wrongly holds as Free
                self.grid.cells[nxt] = CellState.OCCUPIED
                self.log("bump", cell=tuple(nxt))
            try:
                state = advance(self.state, path, self.grid)
            except PathBlocked:
                try:
                    path = plan(self.grid, here, goal, inflation, goal_theta)
                except (NoPath, InvalidEndpoint):
                    self.log("unreachable", goal=tuple(goal))
                    return False
                self.log("replan", goal=tuple(goal), length=len(path))
                continue
            self.step_to(state)

    def arrive(self, goal_theta: float):
        if self.config.dwell:
            p = self.state.pose
            self.step_to(RobotState(Pose(p.x, p.y, goal_theta), self.state.tick + 1))
            self.dwell(goal_theta)
        elif self.state.pose.theta != Pose(0, 0, goal_theta).theta:
            p = self.state.pose
            self.step_to(RobotState(Pose(p.x, p.y, goal_theta), self.state.tick + 1))

    # -- candidate selection ----------------------------------------------

    def choose(self) -> ScoredPose | None:
        cfg = self.config
        reach = reachable_set(self.grid, self.state.pose, cfg.inflation)
        scorer = PoseScorer(self.smap, self.grid, self.sensor.camera_fov, self.sensor.camera_range,
                            cfg.scoring_mode)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SamplingExhausted)
            if cfg.uses_importance_sampling:
                best = importance_sample(self.grid, reach, scorer, cfg.sampler, self.sampler_rng)
                n = cfg.sampler.n_samples * cfg.sampler.n_iterations
            else:
                poses = uniform_sample(reach, self.grid, cfg.sampler, self.sampler_rng)
                n = len(poses)
                if not poses:
                    self.log("sample", n=0)
                    return None
                scored = [ScoredPose(p, s) for p, s in zip(poses, scorer.score_many(poses))]
                dist = distance_field(self.grid, self.here(), cfg.inflation)
                best = select_best(scored, distance=lambda p: dist[world_to_grid(p, self.grid)])
        if caught:
            self.log("exhausted", n=n)
        self.log("sample", n=n, best_score=best.score,
                 best_pose=(best.pose.x, best.pose.y, best.pose.theta))
        return best

    # -- policies ---------------------------------------------------------

    def run_nbv(self) -> Termination:
        failures = 0
        while True:
            best = self.choose()
            if best is None:
                return Termination.NO_CANDIDATES
            self.best_score = best.score
            if best.score < self.config.tau:
                return Termination.SCORE_BELOW_TAU
            goal = world_to_grid(best.pose, self.grid)
            if self.navigate(goal, best.pose.theta):
                failures = 0
                self.arrive(best.pose.theta)
            else:
                failures += 1
                if failures >= MAX_PLAN_FAILURES:
                    return Termination.NO_CANDIDATES

    def run_frontier(self) -> Termination:
        visited = set()
        while True:
            goal = frontier_step(self.grid, self.state, self.config.inflation, frozenset(visited))
            if goal is None:
                return Termination.NO_CANDIDATES
            self.log("frontier", goal=tuple(goal))
            visited.add(goal)
            self.navigate(goal, None)

    def run(self) -> RunResult:
        try:
            self.sense()
            if self.config.dwell and self.config.method != "frontier":
                self.dwell(self.state.pose.theta)
            if self.config.method == "frontier":
                reason = self.run_frontier()
            else:
                reason = self.run_nbv()
        except _Stop as stop:
            reason = stop.reason
        self.log("terminate", reason=reason.value, best_score=self.best_score)
        return RunResult(self.env.name, self.config, self.trajectory, self.metrics, self.grid,
                         self.smap, self.head, reason, self.best_score, self.events)


def run(env: Environment, config: ExplorationConfig, prior=None) -> RunResult:
    """Explore ``env`` from its start pose until the configured method stops.

    ``prior`` optionally supplies ``(OccupancyGrid, SemanticMap)`` to start
    from instead of empty maps.
    """
    return _Explorer(env, config, prior).run()
