"""Semantic feature channel: classifier head, entropy scoring, fusion, pose scoring."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidDistribution, InvalidPose, OutOfBounds
from .gridmap import OccupancyGrid, Pose, visible_cells, world_to_grid

CONVERGENCE_EPS = 1e-9


def shannon_entropy(dist) -> float:
    """Entropy in nats, with ``0 * ln 0 = 0``."""
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution("expected a non-empty 1-D distribution")
    if (p < 0).any() or not np.isfinite(p).all():
        raise InvalidDistribution("negative or non-finite probability")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistribution(f"probabilities sum to {p.sum()!r}")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class ClassifierHead:
    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2:
            raise DimensionMismatch("weights must be an M x N matrix with M >= 2")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def max_entropy(self) -> float:
        return math.log(self.n_classes)

    def permuted(self, order: Sequence[int]) -> "ClassifierHead":
        return ClassifierHead(self.weights[list(order)], self.temperature)


def classify_many(head: ClassifierHead, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != head.feature_dim:
        raise DimensionMismatch(f"feature dim {X.shape[-1]} != head dim {head.feature_dim}")
    logits = X @ head.weights.T / head.temperature
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def classify(head: ClassifierHead, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("expected a single feature vector")
    return classify_many(head, x[None, :])[0]


def prediction_entropy(head: ClassifierHead, X: np.ndarray) -> np.ndarray:
    """Entropy (nats) of the head's prediction for each row of ``X``.

    Uses ``H = log(sum(exp(z))) - sum(p * z)`` on max-shifted logits ``z``,
    which is exactly ``ln M`` for equal logits and 0 when one class takes all
    the mass.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != head.feature_dim:
        raise DimensionMismatch(f"feature dim {X.shape[-1]} != head dim {head.feature_dim}")
    z = X @ head.weights.T / head.temperature
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    total = e.sum(axis=-1, keepdims=True)
    p = e / total
    return np.maximum(np.log(total[..., 0]) - (p * z).sum(axis=-1), 0.0)


def feature_scores(head: ClassifierHead, X: np.ndarray) -> np.ndarray:
    """Normalised prediction entropy for each row of ``X``."""
    return np.clip(prediction_entropy(head, X) / head.max_entropy, 0.0, 1.0)


def feature_score(x, head: ClassifierHead) -> float:
    return float(feature_scores(head, np.asarray(x, dtype=float)[None, :])[0])


# ---------------------------------------------------------------------------
# Map and per-cell state


@dataclass(frozen=True)
class SemanticCell:
    feature: np.ndarray | None = None
    obs_count: int = 0
    score: float = 1.0
    prev_score: float | None = None
    converged: bool = False


def update_convergence(cell: SemanticCell, ratio_threshold: float) -> SemanticCell:
    """Ratio test on the previous and new score; convergence is sticky."""
    if cell.converged or cell.prev_score is None:
        return cell
    ratio = cell.prev_score / max(cell.score, CONVERGENCE_EPS)
    if ratio < ratio_threshold:
        return replace(cell, converged=True)
    return cell


@dataclass
class SemanticMap:
    height: int
    width: int
    feature_dim: int
    features: np.ndarray = field(default=None, repr=False)
    has_feature: np.ndarray = field(default=None, repr=False)
    obs_count: np.ndarray = field(default=None, repr=False)
    score: np.ndarray = field(default=None, repr=False)
    prev_score: np.ndarray = field(default=None, repr=False)
    converged: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        shape = (self.height, self.width)
        if self.features is None:
            self.features = np.zeros(shape + (self.feature_dim,))
        if self.has_feature is None:
            self.has_feature = np.zeros(shape, dtype=bool)
        if self.obs_count is None:
            self.obs_count = np.zeros(shape, dtype=np.int64)
        if self.score is None:
            self.score = np.ones(shape)
        if self.prev_score is None:
            self.prev_score = np.full(shape, np.nan)
        if self.converged is None:
            self.converged = np.zeros(shape, dtype=bool)

    @classmethod
    def like(cls, grid: OccupancyGrid, feature_dim: int) -> "SemanticMap":
        return cls(grid.height, grid.width, feature_dim)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def copy(self) -> "SemanticMap":
        return SemanticMap(self.height, self.width, self.feature_dim, self.features.copy(),
                           self.has_feature.copy(), self.obs_count.copy(), self.score.copy(),
                           self.prev_score.copy(), self.converged.copy())

    def cell(self, idx) -> SemanticCell:
        r, c = idx
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise OutOfBounds(f"cell {tuple(idx)} outside map")
        has = bool(self.has_feature[r, c])
        prev = self.prev_score[r, c]
        return SemanticCell(
            feature=self.features[r, c].copy() if has else None,
            obs_count=int(self.obs_count[r, c]),
            score=float(self.score[r, c]),
            prev_score=None if np.isnan(prev) else float(prev),
            converged=bool(self.converged[r, c]),
        )


def fuse_observations(smap: SemanticMap, rows, cols, X, head: ClassifierHead,
                      ratio_threshold: float) -> SemanticMap:
    """Fold a batch of observations (one per distinct cell) into the map in place.

    Each cell keeps the running mean of its observed features; the score is
    recomputed and the convergence ratio test applied from the second
    observation on.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    X = np.asarray(X, dtype=float).reshape(len(rows), -1)
    if len(rows) == 0:
        return smap
    if X.shape[1] != smap.feature_dim or head.feature_dim != smap.feature_dim:
        raise DimensionMismatch("observation, map and head feature dims must agree")
    if ((rows < 0) | (rows >= smap.height) | (cols < 0) | (cols >= smap.width)).any():
        raise OutOfBounds("observation outside map")
    flat = rows * smap.width + cols
    if len(np.unique(flat)) != len(flat):
        raise ValueError("batch must not repeat a cell; fuse repeated views separately")

    n = smap.obs_count[rows, cols].astype(float)
    prev = smap.features[rows, cols]
    # incremental form keeps the mean bit-exact under repeated identical views
    fused = prev + (X - prev) / (n[:, None] + 1.0)
    new_score = feature_scores(head, fused)
    had = smap.has_feature[rows, cols]
    old_score = smap.score[rows, cols]

    smap.features[rows, cols] = fused
    smap.has_feature[rows, cols] = True
    smap.obs_count[rows, cols] += 1
    smap.prev_score[rows, cols] = np.where(had, old_score, np.nan)
    smap.score[rows, cols] = new_score

    test = had & ~smap.converged[rows, cols]
    ratio = old_score / np.maximum(new_score, CONVERGENCE_EPS)
    smap.converged[rows[test & (ratio < ratio_threshold)], cols[test & (ratio < ratio_threshold)]] = True
    return smap


def fuse_observation(smap: SemanticMap, cell, x, head: ClassifierHead,
                     ratio_threshold: float) -> SemanticMap:
    r, c = cell
    if not (0 <= r < smap.height and 0 <= c < smap.width):
        raise OutOfBounds(f"cell {tuple(cell)} outside map")
    x = np.asarray(x, dtype=float)
    if x.shape != (smap.feature_dim,):
        raise DimensionMismatch(f"feature shape {x.shape} != ({smap.feature_dim},)")
    return fuse_observations(smap, [r], [c], x[None, :], head, ratio_threshold)


# ---------------------------------------------------------------------------
# Pose scoring


class PoseScorer:
    """Scores poses against a frozen snapshot of the semantic and occupancy maps.

    ``mode="semantic"`` averages entropy scores over visible, non-converged
    cells (featureless cells count 1). ``mode="noscore"`` uses 1 for
    featureless cells, 0 otherwise, with no convergence exclusion.
    """

    def __init__(self, smap: SemanticMap, grid: OccupancyGrid, fov: float, max_range: float,
                 mode: str = "semantic"):
        if smap.shape != grid.shape:
            raise DimensionMismatch("semantic and occupancy maps differ in shape")
        self.grid = grid
        self.fov = fov
        self.max_range = max_range
        self.mode = mode
        self.occupied = grid.occupied_mask()
        if mode == "semantic":
            self.cell_score = np.where(smap.has_feature, smap.score, 1.0)
            self.contributes = ~smap.converged
        elif mode == "noscore":
            self.cell_score = np.where(smap.has_feature, 0.0, 1.0)
            self.contributes = np.ones(smap.shape, dtype=bool)
        else:
            raise ValueError(f"unknown scoring mode {mode!r}")

    def __call__(self, pose: Pose) -> float:
        r, c = world_to_grid(pose, self.grid)
        if self.occupied[r, c]:
            raise InvalidPose(f"pose cell {(r, c)} is occupied")
        rows, cols = visible_cells(self.occupied, self.grid.resolution, self.grid.origin,
                                   pose, self.fov, self.max_range)
        keep = self.contributes[rows, cols]
        if not keep.any():
            return 0.0
        return float(self.cell_score[rows[keep], cols[keep]].mean())

    def score_many(self, poses: Sequence[Pose], threads: int | None = None) -> list[float]:
        threads = scoring_threads() if threads is None else threads
        if threads <= 1 or len(poses) < 2:
            return [self(p) for p in poses]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(self, poses))


def scoring_threads() -> int:
    try:
        return max(1, int(os.environ.get("SEGUE_THREADS", "1")))
    except ValueError:
        return 1


def pose_score(pose: Pose, smap: SemanticMap, grid: OccupancyGrid, fov: float,
               max_range: float, mode: str = "semantic") -> float:
    return PoseScorer(smap, grid, fov, max_range, mode)(pose)
