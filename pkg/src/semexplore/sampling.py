"""Candidate pose generation: reachability, uniform sampling and the
Gaussian-mixture importance sampler."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateFit, EmptyCandidates, InvalidPose, SamplingExhausted
from .gridmap import CellState, GridIndex, OccupancyGrid, Pose, traversable_mask, world_to_grid

EIGHT_HEADINGS = tuple(k * math.pi / 4 for k in range(8))
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
MIN_TOTAL_WEIGHT = 1e-12


@dataclass(frozen=True)
class ReachableSet:
    mask: np.ndarray = field(repr=False)
    source: GridIndex

    @property
    def cells(self) -> set[GridIndex]:
        return {GridIndex(int(r), int(c)) for r, c in np.argwhere(self.mask)}

    def __contains__(self, idx) -> bool:
        r, c = idx
        return 0 <= r < self.mask.shape[0] and 0 <= c < self.mask.shape[1] and bool(self.mask[r, c])

    def __len__(self) -> int:
        return int(self.mask.sum())


def reachable_set(grid: OccupancyGrid, start: Pose, inflation: int = 0) -> ReachableSet:
    """Free cells 8-connected to the start cell outside the inflation zone.

    The start cell itself is exempt from inflation so a robot that has drifted
    close to a wall still has a defined reachable region.
    """
    src = world_to_grid(start, grid)
    if grid.cells[src] != CellState.FREE:
        raise InvalidPose(f"start cell {tuple(src)} is not Free")
    ok = traversable_mask(grid, inflation)
    ok[src] = True
    labels, _ = ndimage.label(ok, structure=EIGHT_CONNECTED)
    return ReachableSet(labels == labels[src], src)


@dataclass(frozen=True)
class ScoredPose:
    pose: Pose
    score: float


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 200
    n_iterations: int = 1
    gmm_components: int = 5
    heading_set: tuple[float, ...] = EIGHT_HEADINGS
    max_rejections: int | None = None
    em_iters: int = 10
    cov_floor_cells: float = 2.0

    def __post_init__(self):
        if self.n_samples < 0 or self.n_iterations < 1 or self.gmm_components < 1:
            raise ValueError("n_samples >= 0, n_iterations >= 1 and gmm_components >= 1 required")
        if not self.heading_set:
            raise ValueError("heading_set must not be empty")
        if self.max_rejections is not None and self.max_rejections < 1:
            raise ValueError("max_rejections must be positive")
        if self.em_iters < 1:
            raise ValueError("em_iters must be positive")

    @property
    def draw_budget(self) -> int:
        return self.max_rejections if self.max_rejections is not None else 50 * max(self.n_samples, 1)

    def cov_floor(self, resolution: float) -> float:
        return (self.cov_floor_cells * resolution) ** 2


class PoseSample(list):
    """List of poses that also records whether the draw budget ran out."""

    exhausted: bool = False


def _reachable_positions(xy: np.ndarray, reachable: ReachableSet, grid: OccupancyGrid) -> np.ndarray:
    col = np.floor((xy[:, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
    row = np.floor((xy[:, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
    inside = (row >= 0) & (row < grid.height) & (col >= 0) & (col < grid.width)
    ok = np.zeros(len(xy), dtype=bool)
    ok[inside] = reachable.mask[row[inside], col[inside]]
    return ok


def _rejection_draw(propose: Callable[[int], np.ndarray], n: int, budget: int,
                    reachable: ReachableSet, grid: OccupancyGrid) -> tuple[np.ndarray, int]:
    """Accept proposals in draw order until ``n`` are kept or ``budget`` draws are spent."""
    kept = []
    used = 0
    while len(kept) < n and used < budget:
        batch = min(max(2 * (n - len(kept)), 64), budget - used)
        xy = propose(batch)
        ok = _reachable_positions(xy, reachable, grid)
        # only count draws up to the one that completes the request
        need = n - len(kept)
        hits = np.flatnonzero(ok)
        if len(hits) >= need:
            used += int(hits[need - 1]) + 1
            kept.extend(xy[hits[:need]])
        else:
            used += batch
            kept.extend(xy[hits])
    return np.array(kept, dtype=float).reshape(-1, 2), used


def _attach_headings(xy: np.ndarray, config: SamplerConfig, rng: np.random.Generator) -> PoseSample:
    headings = np.asarray(config.heading_set, dtype=float)
    pick = rng.integers(0, len(headings), size=len(xy))
    return PoseSample(Pose(float(x), float(y), float(headings[k])) for (x, y), k in zip(xy, pick))


def _exhausted(poses: PoseSample, wanted: int, what: str) -> PoseSample:
    poses.exhausted = True
    warnings.warn(f"{what}: accepted {len(poses)} of {wanted} poses before the draw budget ran out",
                  SamplingExhausted, stacklevel=3)
    return poses


def uniform_sample(reachable: ReachableSet, grid: OccupancyGrid, config: SamplerConfig,
                   rng: np.random.Generator, n: int | None = None) -> PoseSample:
    """Rejection-sample poses uniformly over the grid rectangle."""
    n = config.n_samples if n is None else n
    if n == 0:
        return PoseSample()
    if len(reachable) == 0:
        raise ValueError("reachable set is empty")
    lo = np.array(grid.origin, dtype=float)
    span = np.array([grid.width, grid.height], dtype=float) * grid.resolution

    def propose(k):
        return lo + rng.random((k, 2)) * span

    xy, _ = _rejection_draw(propose, n, config.draw_budget, reachable, grid)
    poses = _attach_headings(xy, config, rng)
    if len(poses) < n:
        return _exhausted(poses, n, "uniform sampling")
    return poses


# ---------------------------------------------------------------------------
# Weighted Gaussian mixture


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_log_pdf(self, X: np.ndarray) -> np.ndarray:
        """``log N(x_i | mu_k, Sigma_k)`` as an ``(n, K)`` array."""
        return _component_log_pdf(X, self.means, self.covariances)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, 2))
        chol = np.linalg.cholesky(self.covariances)
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def _component_log_pdf(X, means, covs):
    diff = X[:, None, :] - means[None, :, :]
    inv = np.linalg.inv(covs)
    maha = np.einsum("nki,kij,nkj->nk", diff, inv, diff)
    _, logdet = np.linalg.slogdet(covs)
    return -0.5 * (maha + logdet[None, :] + 2.0 * math.log(2.0 * math.pi))


def _clip_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, floor)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _weighted_log_likelihood(X, w, weights, means, covs) -> float:
    lp = _component_log_pdf(X, means, covs) + np.log(weights)[None, :]
    m = lp.max(axis=1, keepdims=True)
    ll = m[:, 0] + np.log(np.exp(lp - m).sum(axis=1))
    return float(w @ ll)


def _kmeanspp(X, w, k, rng) -> np.ndarray:
    centers = [X[rng.choice(len(X), p=w)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        p = w * d2
        total = p.sum()
        # every weighted point already sits on a center; fall back to the weights
        idx = rng.choice(len(X), p=p / total if total > 0 else w)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def fit_points(X: np.ndarray, weights: np.ndarray, k: int, em_iters: int, floor: float,
               rng: np.random.Generator) -> GaussianMixture:
    """Weighted EM over 2-D points with eigenvalue-clipped covariances.

    Clipping each covariance's eigenvalues at ``floor`` is the exact maximiser
    of the M-step under that constraint, so the weighted log-likelihood is
    non-decreasing from one iteration to the next.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    if len(X) < k:
        raise DegenerateFit(f"{len(X)} samples cannot support {k} components")
    total = w.sum()
    if not total > MIN_TOTAL_WEIGHT:
        raise DegenerateFit(f"total sample weight {total} is too small")
    w = w / total
    means = _kmeanspp(X, w, k, rng)
    centered = X - (w @ X)
    pooled = _clip_covariance((centered * w[:, None]).T @ centered, floor)
    covs = np.repeat(pooled[None], k, axis=0)
    mix = np.full(k, 1.0 / k)
    history = [_weighted_log_likelihood(X, w, mix, means, covs)]
    for _ in range(em_iters):
        lp = _component_log_pdf(X, means, covs) + np.log(mix)[None, :]
        lp -= lp.max(axis=1, keepdims=True)
        resp = np.exp(lp)
        resp /= resp.sum(axis=1, keepdims=True)
        wr = resp * w[:, None]
        nk = wr.sum(axis=0)
        alive = nk > MIN_TOTAL_WEIGHT
        new_means = means.copy()
        new_covs = covs.copy()
        new_means[alive] = (wr[:, alive].T @ X) / nk[alive, None]
        for j in np.flatnonzero(alive):
            d = X - new_means[j]
            new_covs[j] = _clip_covariance((d * wr[:, j, None]).T @ d / nk[j], floor)
        mix = np.maximum(nk, MIN_TOTAL_WEIGHT)
        mix /= mix.sum()
        means, covs = new_means, new_covs
        history.append(_weighted_log_likelihood(X, w, mix, means, covs))
    return GaussianMixture(mix, means, covs, history)


def fit_weighted_gmm(samples: Sequence[ScoredPose], k: int, em_iters: int, floor: float,
                     rng: np.random.Generator | None = None) -> GaussianMixture:
    """Fit positions of ``samples`` with each sample weighted by its score."""
    rng = np.random.default_rng(0) if rng is None else rng
    X = np.array([[s.pose.x, s.pose.y] for s in samples], dtype=float).reshape(-1, 2)
    w = np.array([s.score for s in samples], dtype=float)
    return fit_points(X, w, k, em_iters, floor, rng)


# ---------------------------------------------------------------------------
# Importance sampling


@dataclass(frozen=True)
class SampleRound:
    iteration: int
    samples: tuple[ScoredPose, ...]
    mixture: GaussianMixture | None


def _snap(point, reachable: ReachableSet, grid: OccupancyGrid) -> tuple[float, float]:
    """``point`` if its cell is reachable, else the nearest reachable cell center."""
    if _reachable_positions(np.asarray([point], dtype=float), reachable, grid)[0]:
        return float(point[0]), float(point[1])
    rc = np.argwhere(reachable.mask)
    centers = np.column_stack([grid.origin[0] + (rc[:, 1] + 0.5) * grid.resolution,
                               grid.origin[1] + (rc[:, 0] + 0.5) * grid.resolution])
    j = int(np.argmin(((centers - point) ** 2).sum(axis=1)))
    return float(centers[j, 0]), float(centers[j, 1])


def _score(poses, scorer) -> list[ScoredPose]:
    many = getattr(scorer, "score_many", None)
    scores = many(poses) if many is not None else [scorer(p) for p in poses]
    return [ScoredPose(p, float(s)) for p, s in zip(poses, scores)]


def importance_sample(grid: OccupancyGrid, reachable: ReachableSet, scorer, config: SamplerConfig,
                      rng: np.random.Generator, trace: list | None = None) -> ScoredPose:
    """Iteratively refit a score-weighted mixture and resample from it.

    ``scorer`` maps a Pose to its score (a PoseScorer or any callable).
    Returns the best (component mean, heading) pair of the final fit; falls
    back to the best raw sample when no fit is possible.
    """
    floor = config.cov_floor(grid.resolution)
    k = config.gmm_components
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SamplingExhausted)
        scored = _score(uniform_sample(reachable, grid, config, rng), scorer)
    if trace is not None:
        trace.append(SampleRound(0, tuple(scored), None))
    for it in range(1, config.n_iterations):
        try:
            gmm = fit_weighted_gmm(scored, k, config.em_iters, floor, rng)
        except DegenerateFit:
            gmm = None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SamplingExhausted)
            if gmm is None:
                poses = uniform_sample(reachable, grid, config, rng)
            else:
                xy, _ = _rejection_draw(lambda n: gmm.sample(n, rng), config.n_samples,
                                        config.draw_budget, reachable, grid)
                poses = _attach_headings(xy, config, rng)
                if len(poses) < config.n_samples:
                    poses.extend(uniform_sample(reachable, grid, config, rng,
                                                n=config.n_samples - len(poses)))
        scored = _score(poses, scorer)
        if trace is not None:
            trace.append(SampleRound(it, tuple(scored), gmm))
    if not scored:
        raise EmptyCandidates("importance sampling produced no poses")
    try:
        gmm = fit_weighted_gmm(scored, k, config.em_iters, floor, rng)
    except DegenerateFit:
        return select_best(scored)
    candidates = []
    for mean in gmm.means:
        x, y = _snap(mean, reachable, grid)
        candidates.extend(Pose(x, y, h) for h in config.heading_set)
    components = _score(candidates, scorer)
    if trace is not None:
        trace.append(SampleRound(config.n_iterations, tuple(components), gmm))
    return select_best(components)


def select_best(candidates: Sequence[ScoredPose],
                distance: Callable[[Pose], float] | None = None) -> ScoredPose:
    """Highest score; ties go to the smaller ``distance``, then to list order."""
    if not candidates:
        raise EmptyCandidates("no candidate poses")
    best_i, best_key = 0, None
    for i, cand in enumerate(candidates):
        d = distance(cand.pose) if distance is not None else 0.0
        key = (-cand.score, d)
        if best_key is None or key < best_key:
            best_i, best_key = i, key
    return candidates[best_i]
