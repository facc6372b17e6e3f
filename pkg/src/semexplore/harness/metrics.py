"""Map quality metrics computed over the robot's own occupancy map."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from ..gridmap import OccupancyGrid
from ..semantics import ClassifierHead, SemanticMap, prediction_entropy


def _observed(grid: OccupancyGrid, smap: SemanticMap) -> np.ndarray:
    if grid.shape != smap.shape:
        raise DimensionMismatch(f"occupancy {grid.shape} and semantic {smap.shape} maps differ")
    return grid.known_mask()


def coverage(grid: OccupancyGrid, smap: SemanticMap) -> float:
    """Fraction of Free or Occupied cells that carry a semantic feature."""
    observed = _observed(grid, smap)
    total = int(observed.sum())
    if total == 0:
        return 0.0
    return int((observed & smap.has_feature).sum()) / total


def average_entropy(grid: OccupancyGrid, smap: SemanticMap, head: ClassifierHead) -> float:
    """Mean prediction entropy (nats) over observed cells; featureless cells count ``ln M``."""
    observed = _observed(grid, smap)
    total = int(observed.sum())
    if total == 0:
        return 0.0
    featured = observed & smap.has_feature
    ent = prediction_entropy(head, smap.features[featured]).sum() if featured.any() else 0.0
    n_blank = total - int(featured.sum())
    return float((ent + n_blank * head.max_entropy) / total)
