"""Byte-deterministic map images, metrics CSV and a reloadable result bundle."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..gridmap import CellState, OccupancyGrid, world_to_grid
from ..semantics import ClassifierHead, SemanticMap, classify_many

OCCUPANCY_GRAY = {CellState.UNKNOWN: 128, CellState.FREE: 255, CellState.OCCUPIED: 0}

# one colour per class id modulo 16
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)
NO_FEATURE = (0, 0, 0)
PATH_COLOR = (255, 0, 0)
START_COLOR = (0, 200, 0)
END_COLOR = (0, 0, 255)

METRICS_HEADER = ("tick", "coverage", "avg_entropy", "best_pose_score")


def occupancy_image(grid: OccupancyGrid) -> np.ndarray:
    img = np.empty(grid.shape, dtype=np.uint8)
    for state, gray in OCCUPANCY_GRAY.items():
        img[grid.cells == state] = gray
    return img


def semantic_image(smap: SemanticMap, head: ClassifierHead) -> np.ndarray:
    img = np.zeros(smap.shape + (3,), dtype=np.uint8)
    img[:] = NO_FEATURE
    if smap.has_feature.any():
        labels = classify_many(head, smap.features[smap.has_feature]).argmax(axis=1)
        img[smap.has_feature] = PALETTE[labels % len(PALETTE)]
    return img


def trajectory_image(grid: OccupancyGrid, cells) -> np.ndarray:
    gray = occupancy_image(grid)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    cells = list(cells)
    for r, c in cells:
        img[r, c] = PATH_COLOR
    if cells:
        img[cells[0]] = START_COLOR
        img[cells[-1]] = END_COLOR
    return img


def write_pgm(path, img: np.ndarray) -> None:
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, np.uint8).tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, np.uint8).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by this module."""
    data = Path(path).read_bytes()
    magic, dims, maxval, body = data.split(b"\n", 3)
    w, h = map(int, dims.split())
    channels = {b"P5": 1, b"P6": 3}[magic]
    img = np.frombuffer(body, dtype=np.uint8)
    return img.reshape(h, w) if channels == 1 else img.reshape(h, w, 3)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            writer.writerow([int(m.tick), _fmt(m.coverage), _fmt(m.avg_entropy), _fmt(m.best_pose_score)])


def _json_float(x: float):
    return None if x is None or not math.isfinite(x) else float(x)


def result_summary(result) -> dict:
    cfg = result.config
    return {
        "env": result.env_name,
        "method": cfg.method,
        "seed": cfg.seed,
        "samples": cfg.sampler.n_samples,
        "iterations": cfg.sampler.n_iterations,
        "tau": cfg.tau,
        "ratio_threshold": cfg.ratio_threshold,
        "max_ticks": cfg.max_ticks,
        "termination_reason": result.termination_reason.value,
        "ticks": result.ticks,
        "final_best_score": _json_float(result.final_best_score),
        "coverage": result.final_coverage,
        "average_entropy": result.final_entropy,
        "sensor": asdict(cfg.sensor),
    }


def trajectory_cells(result) -> list:
    cells = []
    for state in result.trajectory:
        cell = tuple(world_to_grid(state.pose, result.occupancy))
        if not cells or cells[-1] != cell:
            cells.append(cell)
    return cells


def render_maps(out_dir, grid: OccupancyGrid, smap: SemanticMap, head: ClassifierHead, cells) -> list[Path]:
    out = Path(out_dir)
    paths = [out / "occupancy.pgm", out / "semantic.ppm", out / "trajectory.ppm"]
    write_pgm(paths[0], occupancy_image(grid))
    write_ppm(paths[1], semantic_image(smap, head))
    write_ppm(paths[2], trajectory_image(grid, cells))
    return paths


def export_maps(result, out_dir) -> list[Path]:
    """Write map images, the per-tick metrics CSV, a JSON summary and the raw
    map state (``state.npz``) that ``load_bundle`` reads back."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = trajectory_cells(result)
    paths = render_maps(out, result.occupancy, result.semantic, result.head, cells)
    write_metrics_csv(out / "metrics.csv", result.per_tick_metrics)
    (out / "summary.json").write_text(json.dumps(result_summary(result), indent=2, sort_keys=True) + "\n")
    smap = result.semantic
    np.savez_compressed(
        out / "state.npz",
        occupancy=result.occupancy.cells,
        resolution=result.occupancy.resolution,
        origin=np.array(result.occupancy.origin),
        features=smap.features,
        has_feature=smap.has_feature,
        obs_count=smap.obs_count,
        score=smap.score,
        prev_score=smap.prev_score,
        converged=smap.converged,
        head_weights=result.head.weights,
        temperature=result.head.temperature,
        trajectory=np.array(cells, dtype=np.int64).reshape(-1, 2),
    )
    return paths + [out / "metrics.csv", out / "summary.json", out / "state.npz"]


def load_bundle(result_dir):
    """Reload ``(grid, smap, head, trajectory_cells)`` written by ``export_maps``."""
    with np.load(Path(result_dir) / "state.npz") as data:
        cells = data["occupancy"]
        grid = OccupancyGrid(cells.shape[0], cells.shape[1], float(data["resolution"]),
                             tuple(float(v) for v in data["origin"]), cells.copy())
        smap = SemanticMap(cells.shape[0], cells.shape[1], data["features"].shape[2],
                           data["features"].copy(), data["has_feature"].copy(), data["obs_count"].copy(),
                           data["score"].copy(), data["prev_score"].copy(), data["converged"].copy())
        head = ClassifierHead(data["head_weights"].copy(), float(data["temperature"]))
        traj = [tuple(map(int, rc)) for rc in data["trajectory"]]
    return grid, smap, head, traj


def render_result(result_dir) -> list[Path]:
    grid, smap, head, traj = load_bundle(result_dir)
    return render_maps(result_dir, grid, smap, head, traj)
