import json
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from src.core.geometry import Box2D
from src.core.losses import bone_length_sum
from src.core.synthdata import (
    BOX_MARGIN,
    Camera,
    SceneSample,
    Skeleton,
    augment,
    default_skeleton,
    generate_dataset,
    generate_scene,
    ground_truth_from_sample,
    sample_pose,
    tight_box,
)


def check_sample(sample: SceneSample, skeleton):
    cam = sample.camera
    for person in sample.people:
        assert person.pose3d.shape == (skeleton.n_joints, 3)
        assert person.depth > 0
        assert person.depth == person.pose3d[skeleton.root_index, 2]
        np.testing.assert_allclose(person.pose2d, cam.project(person.pose3d), atol=1e-9)
        assert person.n_visible >= 2
        assert not (person.visibility & ~cam.in_frame(person.pose2d)).any()
        expected = tight_box(person.pose2d, person.visibility, BOX_MARGIN)
        np.testing.assert_allclose(person.box.as_array(), expected.as_array(), atol=1e-9)


class TestSkeleton:
    def test_default_is_a_rooted_tree(self, skeleton):
        assert skeleton.n_joints == 15
        assert skeleton.joint_names[skeleton.root_index] == "pelvis"
        ordered = skeleton.topological_edges()
        seen = {skeleton.root_index}
        for parent, child in ordered:
            assert parent in seen
            seen.add(child)
        assert seen == set(range(15))

    @pytest.mark.parametrize("edges", [((0, 1),), ((0, 1), (1, 0)), ((0, 1), (0, 1)), ((1, 2), (2, 1))])
    def test_rejects_non_trees(self, edges):
        with pytest.raises(ValueError):
            Skeleton(joint_names=("a", "b", "c"), edges=edges)

    def test_sampled_pose_keeps_bone_lengths(self, skeleton, rng):
        rest = skeleton.rest_array()
        for _ in range(20):
            pose = sample_pose(rng, skeleton, yaw=float(rng.uniform(-math.pi, math.pi)))
            for parent, child in skeleton.edges:
                assert np.linalg.norm(pose[child] - pose[parent]) == pytest.approx(
                    np.linalg.norm(rest[child] - rest[parent]), abs=1e-12)
            assert not pose[skeleton.root_index].any()


class TestCamera:
    def test_projection_matches_pinhole_formula(self, camera, rng):
        points = rng.uniform([-3, -2, 2], [3, 2, 30], size=(50, 3))
        pixels = camera.project(points)
        for (x, y, z), (u, v) in zip(points, pixels):
            assert u == pytest.approx(600.0 * x / z + 320.0)
            assert v == pytest.approx(600.0 * y / z + 192.0)

    def test_rejects_bad_focal_length(self):
        with pytest.raises(ValueError):
            Camera(fx=0.0)

    def test_dict_round_trip(self, small_camera):
        assert Camera.from_dict(small_camera.to_dict()) == small_camera


class TestGenerateScene:
    def test_same_seed_same_bytes(self):
        a = generate_scene(11)
        b = generate_scene(11)
        assert json.dumps(a.to_record()) == json.dumps(b.to_record())

    def test_different_seeds_differ(self):
        assert json.dumps(generate_scene(1).to_record()) != json.dumps(generate_scene(2).to_record())

    def test_no_occlusion_central_people_fully_visible(self, scene_sample):
        assert scene_sample.n_people == 3
        for person in scene_sample.people:
            assert person.visibility.all()

    def test_invariants_over_many_seeds(self, skeleton):
        for seed in range(1000):
            sample = generate_scene(seed, occlusion_rate=0.3)
            assert sample.n_people <= 5
            check_sample(sample, skeleton)

    def test_occlusion_hides_joints(self):
        hidden = sum(
            int((~p.visibility).sum())
            for seed in range(50)
            for p in generate_scene(seed, n_people_range=(5, 5), depth_range_m=(4.0, 8.0), occlusion_rate=0.9).people
        )
        assert hidden > 0

    def test_depth_is_log_uniform(self):
        lo, hi = 2.0, 20.0
        depths = [
            p.depth
            for seed in range(1500)
            for p in generate_scene(seed, n_people_range=(1, 1), depth_range_m=(lo, hi), occlusion_rate=0.0).people
        ]
        edges = np.linspace(math.log(lo), math.log(hi), 11)
        counts, _ = np.histogram(np.log(depths), bins=edges)
        assert chisquare(counts).pvalue > 0.01

    @pytest.mark.parametrize("kwargs", [
        {"n_people_range": (3, 1)},
        {"n_people_range": (-1, 2)},
        {"depth_range_m": (0.5, 10.0)},
        {"depth_range_m": (10.0, 5.0)},
        {"occlusion_rate": 1.0},
        {"occlusion_rate": -0.1},
    ])
    def test_rejects_invalid_ranges(self, kwargs):
        with pytest.raises(ValueError):
            generate_scene(0, **kwargs)

    def test_empty_scene_allowed(self):
        assert generate_scene(0, n_people_range=(0, 0)).people == ()


class TestGenerateDataset:
    def test_scenes_do_not_depend_on_batch_size(self):
        small = generate_dataset(5, 3)
        large = generate_dataset(5, 6)
        for a, b in zip(small, large):
            assert a.to_record() == b.to_record()
        assert [s.image_id for s in large] == [f"img_{i:05d}" for i in range(6)]

    def test_record_round_trip(self):
        for scene in generate_dataset(9, 5):
            back = SceneSample.from_record(json.loads(json.dumps(scene.to_record())))
            assert back.to_record() == scene.to_record()


class TestAugment:
    def test_identity(self, scene_sample):
        out = augment(scene_sample, 0)
        assert out.to_record() == scene_sample.to_record()

    def test_scale_two(self, scene_sample):
        out = augment(scene_sample, 0, scale_range=(2.0, 2.0))
        for before, after in zip(scene_sample.people, out.people):
            assert after.box.area == pytest.approx(4.0 * before.box.area)
            np.testing.assert_allclose(after.pose2d, 2.0 * before.pose2d)
            np.testing.assert_array_equal(after.pose3d, before.pose3d)
        assert (out.camera.width, out.camera.height) == (1280, 768)
        np.testing.assert_allclose(out.people[0].pose2d, out.camera.project(out.people[0].pose3d), atol=1e-9)

    def test_crop_excluding_a_person_removes_them(self, scene_sample):
        people = sorted(scene_sample.people, key=lambda p: p.box.xmin)
        left = people[0]
        window = Box2D(left.box.xmax + 1.0, 0.0, float(scene_sample.camera.width), float(scene_sample.camera.height))
        out = augment(scene_sample, 0, crop=window)
        expected = sum(
            int(((p.pose2d[:, 0] >= window.xmin) & p.visibility).sum()) >= 2 for p in scene_sample.people
        )
        assert out.n_people == expected < scene_sample.n_people

    def test_single_visible_joint_removes_the_person(self, scene_sample):
        left = min(scene_sample.people, key=lambda p: p.box.xmin)
        xs = np.sort(left.pose2d[left.visibility, 0])
        window = Box2D(0.5 * (xs[-1] + xs[-2]), 0.0, float(scene_sample.camera.width), float(scene_sample.camera.height))
        out = augment(scene_sample, 0, crop=window)
        assert left.depth not in [p.depth for p in out.people]

    def test_random_crops_keep_consistency(self, skeleton):
        for seed in range(100):
            sample = generate_scene(seed)
            out = augment(sample, seed, scale_range=(0.6, 1.6), crop=(320, 192))
            assert (out.camera.width, out.camera.height) == (320, 192)
            for person in out.people:
                assert person.n_visible >= 2
                assert not (person.visibility & ~out.camera.in_frame(person.pose2d)).any()
                np.testing.assert_allclose(person.pose2d, out.camera.project(person.pose3d), atol=1e-8)

    def test_rejects_bad_scale(self, scene_sample):
        with pytest.raises(ValueError):
            augment(scene_sample, 0, scale_range=(0.0, 1.0))


class TestGroundTruth:
    def test_targets_are_normalised(self, scene_sample, skeleton):
        truth = ground_truth_from_sample(scene_sample, skeleton)
        assert truth.n_people == scene_sample.n_people
        for target in truth.targets3d:
            assert bone_length_sum(target, skeleton.edges) == pytest.approx(1.0, abs=1e-9)
            assert not target[skeleton.root_index].any()
        assert truth.image_id == scene_sample.image_id

    def test_empty_sample(self, camera):
        truth = ground_truth_from_sample(SceneSample("x", camera), default_skeleton())
        assert truth.n_people == 0
        assert truth.n_joints == 15
