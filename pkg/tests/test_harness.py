import json
import math
from pathlib import Path

import numpy as np
import pytest

from semexplore.errors import DimensionMismatch
from semexplore.explore import ExplorationConfig, RunResult, Termination, TickMetrics
from semexplore.gridmap import CellState, OccupancyGrid, Pose
from semexplore.harness.bench import (
    IS_SWEEP,
    US_SWEEP,
    MetricsRow,
    expand_spec,
    read_rows,
    run_benchmark,
    write_rows,
)
from semexplore.harness.cli import main
from semexplore.harness.export import export_maps, read_pnm, render_result, write_pgm
from semexplore.harness.metrics import average_entropy, coverage
from semexplore.planner import RobotState
from semexplore.semantics import ClassifierHead, SemanticMap
from semexplore.sim import ground_truth_classifier, synthesize_prototypes

GOLDEN = Path(__file__).parent / "golden" / "open_seed1"
LN16 = math.log(16)


def observed_grid(n=4):
    g = OccupancyGrid(n, n, 1.0)
    g.cells[:2, :2] = CellState.FREE
    return g


def head16():
    return ground_truth_classifier(synthesize_prototypes(16, 64, 0), 0.15)


class TestCoverage:
    def test_no_features(self):
        assert coverage(observed_grid(), SemanticMap(4, 4, 3)) == 0.0

    def test_all_observed_featured(self):
        smap = SemanticMap(4, 4, 3)
        smap.has_feature[:2, :2] = True
        assert coverage(observed_grid(), smap) == 1.0

    def test_three_of_four(self):
        smap = SemanticMap(4, 4, 3)
        smap.has_feature[:2, :2] = True
        smap.has_feature[0, 0] = False
        smap.has_feature[3, 3] = True  # unknown cells do not count
        assert coverage(observed_grid(), smap) == 0.75

    def test_empty_denominator(self):
        assert coverage(OccupancyGrid(3, 3, 1.0), SemanticMap(3, 3, 2)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            coverage(observed_grid(), SemanticMap(3, 4, 2))


class TestAverageEntropy:
    def test_all_featureless(self):
        assert average_entropy(observed_grid(), SemanticMap(4, 4, 64), head16()) == pytest.approx(LN16)
        assert LN16 == pytest.approx(2.7726, abs=1e-4)

    def test_one_hot(self):
        head = ClassifierHead(np.eye(16), 1.0)
        smap = SemanticMap(4, 4, 16)
        smap.has_feature[:2, :2] = True
        smap.features[:2, :2, 4] = 1e4
        assert average_entropy(observed_grid(), smap, head) == 0.0

    def test_half_and_half(self):
        head = ClassifierHead(np.eye(16), 1.0)
        smap = SemanticMap(4, 4, 16)
        smap.has_feature[0, :2] = True
        smap.features[0, :2, 7] = 1e4
        assert average_entropy(observed_grid(), smap, head) == pytest.approx(LN16 / 2, abs=1e-12)
        assert LN16 / 2 == pytest.approx(1.3863, abs=1e-4)

    def test_relabel_invariance(self):
        rng = np.random.default_rng(4)
        head = ClassifierHead(rng.normal(size=(6, 5)), 0.5)
        grid = observed_grid(6)
        grid.cells[:] = CellState.FREE
        smap = SemanticMap(6, 6, 5)
        smap.has_feature[:] = rng.random((6, 6)) < 0.6
        smap.features[:] = rng.normal(size=(6, 6, 5))
        perm = rng.permutation(6)
        assert average_entropy(grid, smap, head.permuted(perm)) == pytest.approx(
            average_entropy(grid, smap, head), abs=1e-12)
        assert average_entropy(grid, smap, head) <= math.log(6)


def fake_result(grid, smap, head, cells):
    traj = [RobotState(Pose(c + 0.5, r + 0.5), i) for i, (r, c) in enumerate(cells)]
    metrics = [TickMetrics(i, 0.5, 1.0, 0.25) for i in range(len(traj))]
    return RunResult("fake", ExplorationConfig(), traj, metrics, grid, smap, head,
                     Termination.SCORE_BELOW_TAU, 0.01)


class TestExport:
    def test_empty_map_pgm(self, tmp_path):
        grid = OccupancyGrid(4, 4, 1.0)
        write_pgm(tmp_path / "o.pgm", np.full((4, 4), 128, np.uint8))
        grid.cells[0, 0] = CellState.FREE
        res = fake_result(grid, SemanticMap(4, 4, 64), head16(), [(0, 0)])
        grid.cells[0, 0] = CellState.UNKNOWN
        export_maps(res, tmp_path)
        data = (tmp_path / "occupancy.pgm").read_bytes()
        assert data.startswith(b"P5\n4 4\n255\n")
        assert data[-16:] == bytes([128]) * 16

    def test_single_occupied(self, tmp_path):
        grid = OccupancyGrid(4, 4, 1.0)
        grid.cells[2, 1] = CellState.OCCUPIED
        export_maps(fake_result(grid, SemanticMap(4, 4, 64), head16(), [(0, 0)]), tmp_path)
        body = read_pnm(tmp_path / "occupancy.pgm").ravel()
        assert list(np.flatnonzero(body == 0)) == [2 * 4 + 1]

    def test_semantic_palette_and_render_roundtrip(self, tmp_path):
        bank = synthesize_prototypes(16, 64, 0)
        head = ground_truth_classifier(bank, 0.15)
        grid = OccupancyGrid(3, 3, 1.0)
        grid.cells[:] = CellState.FREE
        smap = SemanticMap(3, 3, 64)
        smap.has_feature[1, :] = True
        smap.features[1, :] = bank.prototypes[[0, 5, 12]]
        export_maps(fake_result(grid, smap, head, [(0, 0), (1, 1), (2, 2)]), tmp_path)
        sem = read_pnm(tmp_path / "semantic.ppm")
        assert (sem[0] == 0).all()
        assert len({tuple(px) for px in sem[1]}) == 3
        before = {p: (tmp_path / p).read_bytes() for p in ("occupancy.pgm", "semantic.ppm", "trajectory.ppm")}
        for p in before:
            (tmp_path / p).unlink()
        render_result(tmp_path)
        assert {p: (tmp_path / p).read_bytes() for p in before} == before

    def test_golden_open_seed1(self, tmp_path):
        assert main(["explore", "--env", "open", "--seed", "1", "--out", str(tmp_path)]) == 0
        for name in ("occupancy.pgm", "semantic.ppm", "trajectory.ppm", "metrics.csv"):
            assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


class TestBench:
    def test_rows_round_trip(self, tmp_path):
        rows = [MetricsRow("segue_us", "open", 3, 200, 1, 0.1 + 0.2, 1 / 3, 17, 0.123456789, "MaxTicks", "ok"),
                MetricsRow("frontier", "rooms", 1, 0, 0, math.pi, 2.0, 5, 1e-7, "NoCandidates", "ok")]
        write_rows(tmp_path / "b.csv", rows)
        assert read_rows(tmp_path / "b.csv") == rows

    def test_expand_presets(self):
        spec = {"envs": ["open"], "seeds": [1],
                "groups": [{"methods": ["segue_us", "noscore_us"], "preset": "us"},
                           {"methods": ["segue_is"], "preset": "is"}]}
        runs = expand_spec(spec)
        us = [(r.samples, r.iterations) for r in runs if r.method == "segue_us"]
        assert us == [(n, 1) for n in (10, 50, 100, 200, 500, 1000)]
        assert [(r.iterations, r.samples) for r in runs if r.method == "segue_is"] == list(IS_SWEEP)
        assert len(US_SWEEP) == len(IS_SWEEP) == 6

    def test_single_run_sweep(self, tmp_path):
        spec = {"envs": ["open"], "seeds": [4], "max_ticks": 20, "groups": [{"methods": ["segue_us"]}]}
        rows, summary = run_benchmark(spec, tmp_path)
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert len(lines) == 2 and len(rows) == 1
        assert summary["failed"] == 0
        assert json.loads((tmp_path / "summary.json").read_text())["runs"] == 1

    def test_failed_run_flagged(self, tmp_path):
        spec = {"envs": ["open", str(tmp_path / "missing.json")], "seeds": [1], "max_ticks": 5,
                "groups": [{"methods": ["frontier"]}]}
        rows, summary = run_benchmark(spec, tmp_path)
        assert [r.failed for r in rows] == [False, True]
        assert summary["failed"] == 1


class TestCli:
    def test_config_error(self, tmp_path):
        assert main(["explore", "--env", "open", "--tau", "2", "--out", str(tmp_path)]) == 1
        assert main(["explore", "--env", "open", "--method", "rrg", "--out", str(tmp_path)]) == 1

    def test_io_error(self, tmp_path):
        assert main(["explore", "--env", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
        assert main(["render", "--result", str(tmp_path / "absent")]) == 2

    def test_bad_environment_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"width": 2, "height": 1, "resolution": 1, "start": [0, 0, 0],
                                   "rows": ["##"]}))
        assert main(["explore", "--env", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_explore_and_render(self, tmp_path):
        out = tmp_path / "run"
        assert main(["explore", "--env", "rooms", "--method", "frontier", "--max-ticks", "30",
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["method"] == "frontier" and summary["ticks"] <= 31
        assert main(["render", "--result", str(out)]) == 0
