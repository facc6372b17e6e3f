"""Benchmark sweeps: one exploration run per (group, sampler, method, env, seed).

A sweep description is a JSON object::

    {
      "envs": ["rooms", "aisles", "open"],
      "seeds": [1, 2, 3, 4, 5],
      "max_ticks": 1500,
      "groups": [
        {"methods": ["segue_us", "noscore_us"], "samples": [10, 50, 100]},
        {"methods": ["segue_is", "noscore_is"], "sampler": [[2, 50], [5, 20]]},
        {"methods": ["frontier"]}
      ]
    }

``samples`` lists uniform-sampler sizes (one iteration); ``sampler`` lists
``[iterations, samples]`` pairs. ``"preset": "us"`` or ``"is"`` in a group
expands to the standard six-row sweeps.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..explore import METHODS, ExplorationConfig, run
from ..sampling import SamplerConfig
from ..sim import load_environment

US_SWEEP = ((1, 10), (1, 50), (1, 100), (1, 200), (1, 500), (1, 1000))
IS_SWEEP = ((2, 50), (5, 20), (10, 10), (10, 20), (10, 50), (10, 100))
PRESETS = {"us": US_SWEEP, "is": IS_SWEEP}


@dataclass(frozen=True)
class MetricsRow:
    method: str
    env_name: str
    seed: int
    samples: int
    iterations: int
    coverage: float
    average_entropy: float
    ticks: int
    wall_time: float
    termination: str
    status: str

    @property
    def failed(self) -> bool:
        return self.status != "ok"


CSV_HEADER = tuple(f.name for f in fields(MetricsRow))
_INT_FIELDS = {"seed", "samples", "iterations", "ticks"}
_FLOAT_FIELDS = {"coverage", "average_entropy", "wall_time"}


def row_to_csv(row: MetricsRow) -> list[str]:
    return [repr(v) if isinstance(v, float) else str(v) for v in astuple(row)]


def row_from_csv(record: dict) -> MetricsRow:
    values = {}
    for name in CSV_HEADER:
        raw = record[name]
        if name in _INT_FIELDS:
            values[name] = int(raw)
        elif name in _FLOAT_FIELDS:
            values[name] = float(raw)
        else:
            values[name] = raw
    return MetricsRow(**values)


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row_to_csv(row))


def read_rows(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [row_from_csv(rec) for rec in csv.DictReader(fh)]


@dataclass(frozen=True)
class RunSpec:
    method: str
    env: str
    seed: int
    iterations: int
    samples: int
    max_ticks: int


def expand_spec(spec: dict) -> list[RunSpec]:
    """All runs of a sweep description, in a fixed order."""
    try:
        envs = list(spec["envs"])
        seeds = [int(s) for s in spec.get("seeds", [1])]
        max_ticks = int(spec.get("max_ticks", 1500))
        groups = spec["groups"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed sweep description: {exc}") from exc
    runs = []
    for group in groups:
        methods = group.get("methods", [])
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"sweep group needs methods from {METHODS}, got {methods}")
        if "preset" in group:
            if group["preset"] not in PRESETS:
                raise ConfigError(f"unknown preset {group['preset']!r}")
            settings = list(PRESETS[group["preset"]])
        elif "sampler" in group:
            settings = [(int(i), int(n)) for i, n in group["sampler"]]
        elif "samples" in group:
            settings = [(1, int(n)) for n in group["samples"]]
        else:
            settings = [None]
        for setting in settings:
            for method in methods:
                if method == "frontier":
                    it, n = 0, 0
                elif setting is None:
                    default = ExplorationConfig(method=method).sampler
                    it, n = default.n_iterations, default.n_samples
                else:
                    it, n = setting
                for env in envs:
                    for seed in seeds:
                        runs.append(RunSpec(method, env, seed, it, n, max_ticks))
    return runs


def execute(rs: RunSpec) -> MetricsRow:
    """One run; any failure becomes a row flagged ``failed``."""
    start = time.perf_counter()
    try:
        env = load_environment(rs.env)
        sampler = None if rs.method == "frontier" else SamplerConfig(n_samples=rs.samples,
                                                                     n_iterations=rs.iterations)
        cfg = ExplorationConfig(method=rs.method, seed=rs.seed, max_ticks=rs.max_ticks, sampler=sampler)
        result = run(env, cfg)
    except Exception as exc:  # noqa: BLE001 - a sweep never aborts on one run
        return MetricsRow(rs.method, Path(str(rs.env)).stem, rs.seed, rs.samples, rs.iterations,
                          math.nan, math.nan, 0, time.perf_counter() - start, "", f"failed: {exc!r}")
    return MetricsRow(rs.method, result.env_name, rs.seed, rs.samples, rs.iterations,
                      result.final_coverage, result.final_entropy, result.ticks,
                      time.perf_counter() - start, result.termination_reason.value, "ok")


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if not len(v):
        return {"mean": None, "min": None, "max": None}
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max())}


def summarize(rows: list[MetricsRow]) -> dict:
    ok = [r for r in rows if not r.failed]
    cells = {}
    for r in ok:
        cells.setdefault((r.method, r.env_name, r.samples, r.iterations), []).append(r)
    per_cell = [
        {"method": m, "env": e, "samples": n, "iterations": it, "runs": len(rs),
         "coverage": _stats([r.coverage for r in rs]),
         "average_entropy": _stats([r.average_entropy for r in rs]),
         "ticks": _stats([r.ticks for r in rs])}
        for (m, e, n, it), rs in cells.items()
    ]
    per_method = {}
    for r in ok:
        per_method.setdefault(r.method, []).append(r)
    method_means = {m: {"coverage": float(np.mean([r.coverage for r in rs])),
                        "average_entropy": float(np.mean([r.average_entropy for r in rs])),
                        "runs": len(rs)}
                    for m, rs in per_method.items()}
    return {
        "runs": len(rows),
        "failed": len(rows) - len(ok),
        "cells": per_cell,
        "methods": method_means,
        "coverage_order": sorted(method_means, key=lambda m: -method_means[m]["coverage"]),
        "entropy_order": sorted(method_means, key=lambda m: method_means[m]["average_entropy"]),
    }


def run_benchmark(spec: dict, out_dir=None, workers: int = 1) -> tuple[list[MetricsRow], dict]:
    """Run every cell of ``spec``; write ``bench.csv`` and ``summary.json`` to ``out_dir``."""
    runs = expand_spec(spec)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(execute, runs))
    else:
        rows = [execute(rs) for rs in runs]
    summary = summarize(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "bench.csv", rows)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return rows, summary
