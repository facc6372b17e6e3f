"""Ground-truth world and simulated sensors.

Stands in for a physics simulator, an RGB camera with a learned feature
extractor, and a planar LiDAR. Class appearance is modelled by near-orthogonal
prototype vectors; observations blend a cell's prototype with the next class
by the cell's ambiguity and add Gaussian noise that grows with distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidDims, InvalidPose
from .gridmap import Beam, OccupancyGrid, Pose, RangeScan, visible_cells, world_to_grid
from .semantics import ClassifierHead

BUNDLED_WORLDS = ("rooms", "aisles", "open")
DEFAULT_CLASSES = 16
DEFAULT_FEATURE_DIM = 64
DEFAULT_TEMPERATURE = 0.15


@dataclass(frozen=True)
class SensorSpec:
    camera_fov: float = math.pi / 2
    camera_range: float = 4.0
    lidar_range: float = 12.0
    lidar_beams: int = 360
    noise_sigma0: float = 0.05
    noise_kappa: float = 0.15

    def __post_init__(self):
        if not (self.camera_fov > 0 and self.camera_range > 0 and self.lidar_range > 0
                and self.lidar_beams > 0):
            raise ValueError("sensor ranges, fov and beam count must be positive")
        if self.noise_sigma0 < 0 or self.noise_kappa < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.lidar_range <= self.camera_range:
            raise ValueError("lidar_range must exceed camera_range")

    def noise_sigma(self, distance):
        return self.noise_sigma0 + self.noise_kappa * distance


@dataclass
class Environment:
    obstacle: np.ndarray
    class_id: np.ndarray
    ambiguity: np.ndarray
    resolution: float
    start_pose: Pose
    name: str = "env"
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.obstacle = np.asarray(self.obstacle, dtype=bool)
        self.class_id = np.asarray(self.class_id, dtype=np.int64)
        self.ambiguity = np.asarray(self.ambiguity, dtype=float)
        if not (self.obstacle.shape == self.class_id.shape == self.ambiguity.shape):
            raise ValueError("obstacle, class_id and ambiguity layers differ in shape")
        if ((self.ambiguity < 0) | (self.ambiguity > 1)).any():
            raise ValueError("ambiguity must lie in [0, 1]")
        if (self.class_id < 0).any():
            raise ValueError("class ids must be non-negative")
        r, c = world_to_grid(self.start_pose, self.truth_grid())
        if self.obstacle[r, c]:
            raise InvalidPose("start pose lies in an obstacle")

    @property
    def height(self) -> int:
        return self.obstacle.shape[0]

    @property
    def width(self) -> int:
        return self.obstacle.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.obstacle.shape

    def truth_grid(self) -> OccupancyGrid:
        return OccupancyGrid.from_obstacles(self.obstacle, self.resolution, self.origin)

    def empty_grid(self) -> OccupancyGrid:
        return OccupancyGrid(self.height, self.width, self.resolution, self.origin)

    def is_bounded(self) -> bool:
        o = self.obstacle
        return bool(o[0].all() and o[-1].all() and o[:, 0].all() and o[:, -1].all())


# ---------------------------------------------------------------------------
# Environment files


def _decode_rows(rows: list[str], obstacle_class: int) -> tuple[np.ndarray, np.ndarray]:
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("environment rows must all have the same length")
    obstacle = np.zeros((len(rows), width), dtype=bool)
    class_id = np.zeros((len(rows), width), dtype=np.int64)
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == "#":
                obstacle[i, j] = True
                class_id[i, j] = obstacle_class
            else:
                class_id[i, j] = int(ch, 36)
    return obstacle, class_id


def environment_from_dict(doc: dict, name: str = "env") -> Environment:
    try:
        rows = doc["rows"]
        width, height = int(doc["width"]), int(doc["height"])
        resolution = float(doc["resolution"])
        sx, sy, st = doc["start"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed environment document: {exc}") from exc
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ValueError("rows do not match declared width/height")
    obstacle, class_id = _decode_rows(rows, int(doc.get("obstacle_class", 0)))
    ambiguity = np.zeros(obstacle.shape)
    for r, c, v in doc.get("ambiguity", []):
        ambiguity[int(r), int(c)] = float(v)
    env = Environment(obstacle, class_id, ambiguity, resolution, Pose(sx, sy, st),
                      name=doc.get("name", name))
    if not env.is_bounded():
        raise ValueError("environment boundary ring must be fully obstacle")
    return env


def environment_to_dict(env: Environment) -> dict:
    rows = []
    for i in range(env.height):
        rows.append("".join("#" if env.obstacle[i, j] else np.base_repr(env.class_id[i, j], 36).lower()
                            for j in range(env.width)))
    amb = [[int(r), int(c), float(env.ambiguity[r, c])] for r, c in zip(*np.nonzero(env.ambiguity))]
    return {
        "name": env.name,
        "width": env.width,
        "height": env.height,
        "resolution": env.resolution,
        "start": [env.start_pose.x, env.start_pose.y, env.start_pose.theta],
        "rows": rows,
        "ambiguity": amb,
    }


def load_environment(source: str | Path) -> Environment:
    """Load a JSON environment file, or a bundled world by name."""
    if str(source) in BUNDLED_WORLDS:
        text = resources.files("semexplore.worlds").joinpath(f"{source}.json").read_text()
        return environment_from_dict(json.loads(text), name=str(source))
    path = Path(source)
    return environment_from_dict(json.loads(path.read_text()), name=path.stem)


# ---------------------------------------------------------------------------
# Appearance model


@dataclass(frozen=True)
class PrototypeBank:
    prototypes: np.ndarray = field(repr=False)
    seed: int

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def synthesize_prototypes(n_classes: int, dim: int, seed: int) -> PrototypeBank:
    """Seeded random unit vectors, orthogonalised by modified Gram-Schmidt."""
    if not (dim >= n_classes >= 2):
        raise InvalidDims(f"need dim >= n_classes >= 2, got M={n_classes}, N={dim}")
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(n_classes, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    basis = np.zeros_like(vecs)
    for k in range(n_classes):
        v = vecs[k].copy()
        for j in range(k):
            v -= (basis[j] @ v) * basis[j]
        basis[k] = v / np.linalg.norm(v)
    return PrototypeBank(basis, seed)


def ground_truth_classifier(bank: PrototypeBank, temperature: float) -> ClassifierHead:
    return ClassifierHead(bank.prototypes.copy(), temperature)


# ---------------------------------------------------------------------------
# Sensors


def _check_pose(env: Environment, pose: Pose) -> tuple[int, int]:
    try:
        r, c = world_to_grid(pose, env.truth_grid())
    except IndexError as exc:
        raise InvalidPose(str(exc)) from exc
    if env.obstacle[r, c]:
        raise InvalidPose(f"pose cell {(r, c)} is inside an obstacle")
    return r, c


LIDAR_STEP = 0.1  # cells
LIDAR_CHUNK = 48  # samples marched per beam before dropping finished beams

_OUTSIDE = 2


def sense_lidar(env: Environment, pose: Pose, spec: SensorSpec) -> RangeScan:
    """Noise-free planar scan; bearings are relative to the pose heading."""
    _check_pose(env, pose)
    res = env.resolution
    fx = (pose.x - env.origin[0]) / res
    fy = (pose.y - env.origin[1]) / res
    bearings = np.arange(spec.lidar_beams) * (2 * math.pi / spec.lidar_beams)
    angles = pose.theta + bearings
    cos, sin = np.cos(angles), np.sin(angles)
    t = np.arange(1, int(math.floor(spec.lidar_range / res / LIDAR_STEP)) + 1) * LIDAR_STEP
    # a one-cell border marks "left the grid"; a straight ray never re-enters
    padded = np.full((env.height + 2, env.width + 2), _OUTSIDE, dtype=np.int8)
    padded[1:-1, 1:-1] = env.obstacle
    stop_at = np.full(len(angles), -1)
    stop_val = np.zeros(len(angles), dtype=np.int8)
    active = np.arange(len(angles))
    for lo in range(0, len(t), LIDAR_CHUNK):
        tt = t[lo:lo + LIDAR_CHUNK]
        cols = np.floor(fx + cos[active, None] * tt).astype(np.int64)
        rows = np.floor(fy + sin[active, None] * tt).astype(np.int64)
        np.clip(cols, -1, env.width, out=cols)
        np.clip(rows, -1, env.height, out=rows)
        vals = padded[rows + 1, cols + 1]
        stopped = vals != 0
        done = stopped.any(axis=1)
        first = stopped.argmax(axis=1)
        stop_at[active[done]] = lo + first[done]
        stop_val[active[done]] = vals[done, first[done]]
        active = active[~done]
        if not len(active):
            break
    beams = []
    for i in range(spec.lidar_beams):
        if stop_val[i] == 1:
            beams.append(Beam(float(bearings[i]), float(t[stop_at[i]] * res), True))
        else:
            beams.append(Beam(float(bearings[i]), float(spec.lidar_range), False))
    return RangeScan(tuple(beams), spec.lidar_range)


@dataclass(frozen=True)
class CameraFrame:
    rows: np.ndarray
    cols: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        for r, c, f in zip(self.rows, self.cols, self.features):
            yield (int(r), int(c)), f


def clean_feature(bank: PrototypeBank, class_id: int, ambiguity: float) -> np.ndarray:
    """Noise-free appearance of a cell."""
    proto = bank.prototypes[class_id % bank.n_classes]
    if ambiguity == 0.0:
        return proto.copy()
    alt = bank.prototypes[(class_id + 1) % bank.n_classes]
    mix = (1.0 - ambiguity) * proto + ambiguity * alt
    return mix / np.linalg.norm(mix)


def sense_camera(env: Environment, pose: Pose, spec: SensorSpec, bank: PrototypeBank,
                 rng: np.random.Generator) -> CameraFrame:
    """Noisy features for every cell the camera truly sees, in row-major order."""
    _check_pose(env, pose)
    rows, cols = visible_cells(env.obstacle, env.resolution, env.origin, pose,
                               spec.camera_fov, spec.camera_range)
    res = env.resolution
    cx = env.origin[0] + (cols + 0.5) * res
    cy = env.origin[1] + (rows + 0.5) * res
    dist = np.hypot(cx - pose.x, cy - pose.y)
    classes = env.class_id[rows, cols] % bank.n_classes
    amb = env.ambiguity[rows, cols]
    protos = bank.prototypes[classes]
    alts = bank.prototypes[(classes + 1) % bank.n_classes]
    mix = (1.0 - amb)[:, None] * protos + amb[:, None] * alts
    mixed = amb > 0
    mix[mixed] /= np.linalg.norm(mix[mixed], axis=1, keepdims=True)
    sigma = spec.noise_sigma(dist)
    noise = rng.standard_normal(size=mix.shape) * sigma[:, None]
    return CameraFrame(rows, cols, mix + noise)
