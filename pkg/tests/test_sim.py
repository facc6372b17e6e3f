import json
import math

import numpy as np
import pytest

from oracles import entropy_sum
from semexplore.errors import InvalidDims, InvalidPose
from semexplore.gridmap import OccupancyGrid, Pose, visibility_mask
from semexplore.semantics import SemanticMap, classify, feature_score, fuse_observations
from semexplore.sim import (
    BUNDLED_WORLDS,
    DEFAULT_CLASSES,
    DEFAULT_FEATURE_DIM,
    DEFAULT_TEMPERATURE,
    Environment,
    SensorSpec,
    environment_from_dict,
    environment_to_dict,
    ground_truth_classifier,
    load_environment,
    sense_camera,
    sense_lidar,
    synthesize_prototypes,
)


def box_env(h=20, w=20, res=0.25, start=None, classes=None):
    obstacle = np.zeros((h, w), dtype=bool)
    obstacle[0, :] = obstacle[-1, :] = obstacle[:, 0] = obstacle[:, -1] = True
    class_id = np.zeros((h, w), dtype=int) if classes is None else classes
    start = start or Pose(w * res / 2, h * res / 2, 0.0)
    return Environment(obstacle, class_id, np.zeros((h, w)), res, start)


class TestPrototypes:
    def test_two_by_two_orthonormal(self):
        p = synthesize_prototypes(2, 2, 0).prototypes
        np.testing.assert_allclose(p @ p.T, np.eye(2), atol=1e-12)

    def test_deterministic(self):
        a = synthesize_prototypes(16, 64, 5).prototypes
        b = synthesize_prototypes(16, 64, 5).prototypes
        assert np.array_equal(a, b)
        assert not np.array_equal(a, synthesize_prototypes(16, 64, 6).prototypes)

    def test_gram_matrix(self):
        p = synthesize_prototypes(8, 32, 7).prototypes
        gram = p @ p.T
        assert np.abs(gram - np.diag(np.diag(gram))).max() <= 1e-9
        np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("m,n", [(1, 4), (5, 4)])
    def test_invalid_dims(self, m, n):
        with pytest.raises(InvalidDims):
            synthesize_prototypes(m, n, 0)


class TestClassifier:
    def test_clean_prototype_confident(self):
        bank = synthesize_prototypes(8, 16, 1)
        head = ground_truth_classifier(bank, 0.1)
        expected = math.exp(10) / (math.exp(10) + 7)
        for k in range(8):
            p = classify(head, bank.prototypes[k])
            assert int(np.argmax(p)) == k
            assert p[k] == pytest.approx(expected, abs=1e-9)
            assert p[k] > 0.99

    def test_entropy_increases_with_temperature(self):
        bank = synthesize_prototypes(8, 16, 1)
        x = bank.prototypes[2]
        ents = [entropy_sum(classify(ground_truth_classifier(bank, t), x)) for t in (0.1, 1.0, 10.0)]
        assert ents[0] < ents[1] < ents[2]

    def test_zero_feature_uniform(self):
        head = ground_truth_classifier(synthesize_prototypes(6, 12, 2), 0.25)
        np.testing.assert_allclose(classify(head, np.zeros(12)), np.full(6, 1 / 6), atol=1e-15)


class TestLidar:
    def test_all_miss_in_large_room(self):
        env = box_env(200, 200, 0.25)
        scan = sense_lidar(env, env.start_pose, SensorSpec(lidar_range=12.0, lidar_beams=90))
        assert len(scan) == 90
        assert all(not b.hit and b.distance == 12.0 for b in scan.beams)

    def test_wall_due_east(self):
        env = box_env(40, 40, 0.25)
        env.obstacle[:, 26] = True
        pose = Pose(3.5, 5.0, 0.0)
        scan = sense_lidar(env, pose, SensorSpec(lidar_beams=360))
        # the wall's west face sits at x = 26 * 0.25 = 6.5 m
        analytic = 26 * 0.25 - pose.x
        assert analytic == 3.0
        beam = scan.beams[0]
        assert beam.hit and abs(beam.distance - analytic) <= 0.5 * 0.25

    def test_contact(self):
        env = box_env(20, 20, 0.25)
        pose = Pose(0.25 + 0.125, 2.5, math.pi)
        beam = sense_lidar(env, pose, SensorSpec()).beams[0]
        assert beam.hit and beam.distance <= 0.25

    def test_relative_bearings_evenly_spaced(self):
        env = box_env()
        scan = sense_lidar(env, env.start_pose, SensorSpec(lidar_beams=8))
        np.testing.assert_allclose([b.bearing for b in scan.beams], np.arange(8) * math.pi / 4)
        assert all(b.distance <= 12.0 for b in scan.beams)

    def test_pose_in_wall(self):
        env = box_env()
        with pytest.raises(InvalidPose):
            sense_lidar(env, Pose(0.1, 0.1, 0.0), SensorSpec())


class TestCamera:
    def test_noiseless_contact(self):
        bank = synthesize_prototypes(4, 8, 0)
        classes = np.full((10, 10), 2)
        env = box_env(10, 10, 1.0, start=Pose(4.5, 4.5, 0.0), classes=classes)
        spec = SensorSpec(camera_range=0.4, lidar_range=5.0, noise_sigma0=0.0, noise_kappa=0.0)
        frame = sense_camera(env, env.start_pose, spec, bank, np.random.default_rng(0))
        assert len(frame) == 1
        (cell, feat), = list(frame)
        assert cell == (4, 4)
        assert np.array_equal(feat, bank.prototypes[2])

    def test_half_ambiguity_near_two_way_tie(self):
        m = 16
        bank = synthesize_prototypes(m, 64, 0)
        head = ground_truth_classifier(bank, 0.05)
        env = box_env(10, 10, 1.0, start=Pose(4.5, 4.5, 0.0), classes=np.full((10, 10), 5))
        env.ambiguity[4, 4] = 0.5
        spec = SensorSpec(camera_range=0.4, lidar_range=5.0, noise_sigma0=0.0, noise_kappa=0.0)
        (_, feat), = list(sense_camera(env, env.start_pose, spec, bank, np.random.default_rng(0)))
        p = classify(head, feat)
        assert p[5] == pytest.approx(p[6], abs=1e-9)
        assert p[5] + p[6] > 0.999
        assert feature_score(feat, head) == pytest.approx(math.log(2) / math.log(m), abs=0.01)

    def test_occlusion(self):
        bank = synthesize_prototypes(4, 8, 0)
        env = box_env(12, 12, 1.0, start=Pose(2.5, 5.5, 0.0))
        env.obstacle[3:9, 5] = True
        spec = SensorSpec(camera_fov=math.pi / 2, camera_range=8.0, lidar_range=9.0)
        frame = sense_camera(env, env.start_pose, spec, bank, np.random.default_rng(0))
        cells = {c for c, _ in frame}
        assert (5, 5) in cells
        assert (5, 6) not in cells and (5, 8) not in cells

    def test_subset_of_truth_visibility_and_deterministic(self):
        env = load_environment("rooms")
        bank = synthesize_prototypes(16, 64, 0)
        spec = SensorSpec()
        truth = env.truth_grid()
        for i, pose in enumerate([env.start_pose, Pose(3.1, 1.6, 0.7), Pose(7.0, 7.0, -2.0)]):
            a = sense_camera(env, pose, spec, bank, np.random.default_rng(i))
            b = sense_camera(env, pose, spec, bank, np.random.default_rng(i))
            assert np.array_equal(a.features, b.features) and np.array_equal(a.rows, b.rows)
            mask = visibility_mask(truth, pose, spec.camera_fov, spec.camera_range)
            assert {c for c, _ in a} <= set(mask.visible)


class TestAppearanceStatistics:
    """Properties of fused observations under the distance-noise model."""

    M, N, T = DEFAULT_CLASSES, DEFAULT_FEATURE_DIM, DEFAULT_TEMPERATURE

    def _setup(self):
        bank = synthesize_prototypes(self.M, self.N, 0)
        return bank, ground_truth_classifier(bank, self.T)

    def test_fusion_reduces_score_at_fixed_distance(self):
        bank, head = self._setup()
        env = box_env(20, 20, 0.25, start=Pose(1.125, 2.625, 0.0), classes=np.full((20, 20), 3))
        spec = SensorSpec()
        # observe cell (10, 10) from 2 m away, straight along the row
        target = (10, 10)
        pose = Pose(0.625, 2.625, 0.0)
        first, tenth = [], []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            smap = SemanticMap(20, 20, self.N)
            for k in range(10):
                frame = sense_camera(env, pose, spec, bank, rng)
                sel = (frame.rows == target[0]) & (frame.cols == target[1])
                fuse_observations(smap, frame.rows[sel], frame.cols[sel], frame.features[sel], head, 1.1)
                if k == 0:
                    first.append(smap.score[target])
            tenth.append(smap.score[target])
        assert np.mean(first) - np.mean(tenth) > 0.05

    def test_ambiguous_cells_keep_high_score(self):
        bank, head = self._setup()
        env = box_env(10, 10, 0.25, start=Pose(1.125, 1.125, 0.0), classes=np.full((10, 10), 7))
        env.ambiguity[4, 5] = 0.5
        spec = SensorSpec(camera_range=1.0, lidar_range=5.0)
        pose = Pose(1.125, 1.125, 0.0)
        kept = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            smap = SemanticMap(10, 10, self.N)
            for _ in range(20):
                frame = sense_camera(env, pose, spec, bank, rng)
                sel = (frame.rows == 4) & (frame.cols == 5)
                fuse_observations(smap, frame.rows[sel], frame.cols[sel], frame.features[sel], head, 1.1)
            kept += smap.score[4, 5] >= 0.3
        assert kept >= 45


class TestEnvironmentFiles:
    @pytest.mark.parametrize("name", BUNDLED_WORLDS)
    def test_bundled_worlds(self, name):
        env = load_environment(name)
        assert env.shape == (40, 40)
        assert env.is_bounded()
        r, c = int(env.start_pose.y / env.resolution), int(env.start_pose.x / env.resolution)
        assert not env.obstacle[r, c]
        assert env.ambiguity.max() > 0

    def test_round_trip(self, tmp_path):
        env = load_environment("aisles")
        path = tmp_path / "w.json"
        path.write_text(json.dumps(environment_to_dict(env)))
        again = load_environment(path)
        assert np.array_equal(again.obstacle, env.obstacle)
        assert np.array_equal(again.class_id[~env.obstacle], env.class_id[~env.obstacle])
        assert np.array_equal(again.ambiguity, env.ambiguity)

    def test_unbounded_rejected(self):
        doc = {"width": 3, "height": 3, "resolution": 1.0, "start": [1.5, 1.5, 0.0],
               "rows": ["###", "#1 ", "###"]}
        with pytest.raises(ValueError):
            environment_from_dict(doc)
        doc["rows"] = ["###", "#11", "###"]
        with pytest.raises(ValueError):
            environment_from_dict(doc)
