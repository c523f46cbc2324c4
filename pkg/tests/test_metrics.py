import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from src.core.decode import Detection
from src.core.geometry import Box2D, box_iou
from src.core.losses import normalize_pose3d
from src.core.metrics import (
    DISTANCE_BINS,
    PoseEvalCase,
    average_precision,
    evaluate_detections,
    group_pck,
    joint_errors_mm,
    match_for_pose_eval,
    mpjpe,
    pck3d,
    pose_eval_cases,
    precision_recall,
    rescale_prediction,
    voc_ap,
)
from src.core.synthdata import SceneSample, generate_scene


def det(score, box, image_id="a", anchor_index=(0, 0, 0), pose3d=None):
    return Detection(
        score=score,
        box=Box2D(*box),
        pose2d=np.zeros((1, 2)),
        pose3d=np.zeros((1, 3)) if pose3d is None else pose3d,
        anchor_index=anchor_index,
        image_id=image_id,
    )


def perfect_detection(person, skeleton, image_id, score=0.9):
    return Detection(
        score=score,
        box=person.box,
        pose2d=person.pose2d.copy(),
        pose3d=normalize_pose3d(person.pose3d, skeleton.edges, skeleton.root_index),
        anchor_index=(0, 0, 0),
        image_id=image_id,
    )


GT = (0.0, 0.0, 10.0, 10.0)
FAR = (50.0, 50.0, 60.0, 60.0)


class TestAveragePrecision:
    def test_single_exact_detection(self):
        assert average_precision({"a": [det(0.9, GT)]}, {"a": [Box2D(*GT)]}) == 1.0

    def test_true_positive_ranked_first(self):
        dets = {"a": [det(0.9, GT), det(0.8, FAR)]}
        assert average_precision(dets, {"a": [Box2D(*GT)]}) == pytest.approx(1.0, abs=1e-9)

    def test_false_positive_ranked_first(self):
        dets = {"a": [det(0.9, FAR), det(0.8, GT)]}
        assert average_precision(dets, {"a": [Box2D(*GT)]}) == pytest.approx(0.5, abs=1e-9)

    def test_two_ground_truths_with_interleaved_false_positive(self):
        second = (20.0, 0.0, 30.0, 10.0)
        dets = {"a": [det(0.9, GT), det(0.8, FAR), det(0.7, second)]}
        gts = {"a": [Box2D(*GT), Box2D(*second)]}
        assert average_precision(dets, gts) == pytest.approx(0.5 + 0.5 * 2.0 / 3.0, abs=1e-9)

    def test_only_false_positives(self):
        assert average_precision({"a": [det(0.9, FAR)]}, {"a": [Box2D(*GT)]}) == 0.0

    def test_missed_image_halves_recall(self):
        dets = {"a": [det(0.6, GT)]}
        gts = {"a": [Box2D(*GT)], "b": [Box2D(*GT)]}
        assert average_precision(dets, gts) == pytest.approx(0.5, abs=1e-9)

    def test_duplicate_is_false_positive(self):
        dets = {"a": [det(0.9, GT), det(0.8, GT, anchor_index=(0, 1, 0))]}
        pr = precision_recall(dets, {"a": [Box2D(*GT)]})
        np.testing.assert_array_equal(pr.true_positive, [True, False])
        assert pr.ap == pytest.approx(1.0)

    def test_no_ground_truth_is_flagged(self):
        pr = precision_recall({"a": [det(0.9, GT)]}, {"a": []})
        assert pr.ap == 0.0
        assert not pr.defined

    def test_detection_in_other_image_does_not_match(self):
        dets = {"b": [det(0.9, GT, image_id="b")]}
        assert average_precision(dets, {"a": [Box2D(*GT)], "b": []}) == 0.0

    def test_invariant_to_monotone_score_transform(self, rng):
        boxes = [tuple(np.r_[xy, xy + rng.uniform(5, 20, 2)]) for xy in rng.uniform(0, 40, size=(12, 2))]
        gts = {"a": [Box2D(*b) for b in boxes[:6]]}
        scores = rng.random(12)
        shifted = [(b[0] + 1.0, b[1], b[2] + 1.0, b[3]) for b in boxes]
        plain = {"a": [det(s, b, anchor_index=(k, 0, 0)) for k, (s, b) in enumerate(zip(scores, shifted))]}
        warped = {"a": [det(s ** 3 * 0.5, b, anchor_index=(k, 0, 0)) for k, (s, b) in enumerate(zip(scores, shifted))]}
        assert average_precision(plain, gts) == average_precision(warped, gts)

    def test_voc_ap_envelope(self):
        assert voc_ap(np.array([0.5, 0.5, 1.0]), np.array([1.0, 0.5, 2.0 / 3.0])) == pytest.approx(5.0 / 6.0)


class TestPairing:
    def test_disjoint_boxes_are_missed(self):
        pairing = match_for_pose_eval([Box2D(*FAR)], [Box2D(*GT), Box2D(20, 20, 30, 30)])
        assert pairing.pairs == []
        assert pairing.missed == [0, 1]
        assert pairing.unpaired_detections == [0]

    def test_identical_boxes_pair(self):
        pairing = match_for_pose_eval([Box2D(*GT)], [Box2D(*GT)])
        assert pairing.pairs == [(0, 0)]
        assert pairing.missed == []

    def test_low_overlap_is_not_a_pair(self):
        # IoU = 5 / 195
        pairing = match_for_pose_eval([Box2D(9.5, 0, 19.5, 10)], [Box2D(*GT)])
        assert pairing.pairs == []

    def test_crossing_pairs_match_exhaustive_assignment(self):
        dets = [Box2D(0.5, 0, 10.5, 10), Box2D(5, 0, 15, 10)]
        gts = [Box2D(0, 0, 10, 10), Box2D(6, 0, 16, 10)]
        pairing = match_for_pose_eval(dets, gts)

        overlaps = box_iou(dets, gts)
        weights = np.where(overlaps > 0.1, overlaps, 0.0)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        expected = sorted((int(r), int(c)) for r, c in zip(rows, cols) if weights[r, c] > 0)
        assert sorted(pairing.pairs) == expected == [(0, 0), (1, 1)]

    def test_greedy_pairing_is_maximal(self, rng):
        for _ in range(200):
            dets = [Box2D(*np.r_[xy, xy + rng.uniform(5, 25, 2)]) for xy in rng.uniform(0, 50, size=(rng.integers(0, 6), 2))]
            gts = [Box2D(*np.r_[xy, xy + rng.uniform(5, 25, 2)]) for xy in rng.uniform(0, 50, size=(rng.integers(0, 6), 2))]
            pairing = match_for_pose_eval(dets, gts)
            d_used = [d for d, _ in pairing.pairs]
            g_used = [g for _, g in pairing.pairs]
            assert len(set(d_used)) == len(d_used) and len(set(g_used)) == len(g_used)
            assert sorted(g_used + pairing.missed) == list(range(len(gts)))
            assert sorted(d_used + pairing.unpaired_detections) == list(range(len(dets)))
            if dets and gts:
                overlaps = box_iou(dets, gts)
                assert all(overlaps[d, g] > 0.1 for d, g in pairing.pairs)
                for d in pairing.unpaired_detections:
                    assert all(overlaps[d, g] <= 0.1 for g in pairing.missed)


class TestPoseErrors:
    def test_rescaled_prediction_recovers_ground_truth(self, scene_sample, skeleton):
        person = scene_sample.people[0]
        normalised = normalize_pose3d(person.pose3d, skeleton.edges, skeleton.root_index)
        metric = rescale_prediction(normalised, person.pose3d, skeleton.edges, skeleton.root_index)
        np.testing.assert_allclose(metric, person.pose3d, atol=1e-12)

    def test_prediction_translation_is_ignored(self, scene_sample, skeleton):
        person = scene_sample.people[0]
        normalised = normalize_pose3d(person.pose3d, skeleton.edges, skeleton.root_index) + 0.05
        normalised[3] += 0.01
        a = joint_errors_mm(rescale_prediction(normalised, person.pose3d, skeleton.edges, 0), person.pose3d)
        b = joint_errors_mm(rescale_prediction(normalised + [1.0, -2.0, 3.0], person.pose3d, skeleton.edges, 0),
                            person.pose3d)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_single_joint_offset(self, scene_sample, skeleton):
        person = scene_sample.people[0]
        scale = sum(np.linalg.norm(person.pose3d[c] - person.pose3d[p]) for p, c in skeleton.edges)
        pred = normalize_pose3d(person.pose3d, skeleton.edges, skeleton.root_index)
        pred[4, 0] += 0.030 / scale
        scene = SceneSample("a", scene_sample.camera, (person,))
        d = Detection(0.9, person.box, person.pose2d, pred, (0, 0, 0), "a")
        cases = pose_eval_cases([d], scene, skeleton)
        assert mpjpe(cases) == pytest.approx(2.0, abs=1e-6)

    def test_mpjpe_stable_under_duplicate_person(self):
        case = PoseEvalCase(np.array([30.0] + [0.0] * 14), 5.0, 15)
        assert mpjpe([case]) == pytest.approx(2.0)
        assert mpjpe([case, case]) == pytest.approx(2.0)

    def test_mpjpe_ignores_misses_and_reports_absence(self):
        assert mpjpe([PoseEvalCase(None, 5.0, 15)]) is None
        assert mpjpe([PoseEvalCase(np.zeros(15), 5.0, 15), PoseEvalCase(None, 5.0, 15)]) == 0.0


class TestPck3D:
    def test_all_under_threshold(self):
        cases = [PoseEvalCase(np.full(15, 100.0), 5.0, 15)]
        assert pck3d(cases, 15).overall == 100.0

    def test_miss_counts_every_joint_wrong(self):
        cases = [PoseEvalCase(np.zeros(15), 5.0, 15), PoseEvalCase(None, 5.0, 15)]
        result = pck3d(cases, 15)
        assert result.overall == 50.0
        assert result.per_joint == [50.0] * 15

    def test_threshold_is_strict(self):
        assert pck3d([PoseEvalCase(np.full(2, 150.0), 5.0, 2)], 2).overall == 0.0

    def test_distance_bins(self):
        cases = [
            PoseEvalCase(np.zeros(2), 5.0, 2),
            PoseEvalCase(np.array([0.0, 500.0]), 15.0, 2),
            PoseEvalCase(None, 45.0, 2),
        ]
        bins = dict(pck3d(cases, 2).per_distance_bin)
        assert [label for _, _, label in DISTANCE_BINS] == list(bins)
        assert bins == {"<10": 100.0, "10-20": 50.0, "20-30": None, "30-40": None, ">40": 0.0}

    def test_matches_recount_and_is_monotone(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            cases = []
            for _ in range(int(rng.integers(1, 8))):
                depth = float(rng.uniform(2, 50))
                errors = None if rng.random() < 0.3 else rng.exponential(120.0, size=15)
                cases.append(PoseEvalCase(errors, depth, 15))

            correct = total = 0
            per_joint = np.zeros(15)
            for case in cases:
                for k in range(15):
                    total += 1
                    if case.errors_mm is not None and case.errors_mm[k] < 150.0:
                        correct += 1
                        per_joint[k] += 1
            result = pck3d(cases, 15, 150.0)
            assert result.overall == pytest.approx(100.0 * correct / total)
            np.testing.assert_allclose(result.per_joint, 100.0 * per_joint / len(cases))

            sweep = [pck3d(cases, 15, t).overall for t in np.linspace(0, 1000, 21)]
            assert all(a <= b for a, b in zip(sweep, sweep[1:]))
            matched = sum(not c.missed for c in cases)
            assert pck3d(cases, 15, math.inf).overall == pytest.approx(100.0 * matched / len(cases))

    def test_group_averages(self, skeleton):
        per_joint = [float(k) for k in range(skeleton.n_joints)]
        groups = group_pck(per_joint, skeleton.joint_names)
        index = {name: k for k, name in enumerate(skeleton.joint_names)}
        assert groups["knees"] == pytest.approx((index["l_knee"] + index["r_knee"]) / 2.0)
        assert groups["head"] == index["head"]
        assert len(groups) == 9


class TestEvaluateDetections:
    def test_ground_truth_detections_are_perfect(self, scene_sample, skeleton):
        dets = [perfect_detection(p, skeleton, scene_sample.image_id) for p in scene_sample.people]
        report = evaluate_detections(dets, [scene_sample], skeleton)
        assert report.ap == 1.0
        assert report.pck3d == 100.0
        assert report.mpjpe_mm == pytest.approx(0.0, abs=1e-6)
        assert report.n_misses == 0
        assert report.n_ground_truths == scene_sample.n_people

    def test_no_detections(self, scene_sample, skeleton):
        report = evaluate_detections([], [scene_sample], skeleton)
        assert report.ap == 0.0
        assert report.pck3d == 0.0
        assert report.mpjpe_mm is None
        assert report.n_misses == report.n_ground_truths == scene_sample.n_people

    def test_one_hit_one_miss_scores_half(self, scene_sample, skeleton):
        scene = SceneSample("a", scene_sample.camera, scene_sample.people[:2])
        report = evaluate_detections([perfect_detection(scene.people[0], skeleton, "a")], [scene], skeleton)
        assert report.pck3d == 50.0
        assert report.n_misses == 1

    def test_equals_direct_metric_calls(self, skeleton):
        scenes = [generate_scene(s, n_people_range=(2, 4), occlusion_rate=0.0, image_id=f"s{s}") for s in range(4)]
        rng = np.random.default_rng(3)
        dets = []
        for scene in scenes:
            for p in scene.people[1:]:
                d = perfect_detection(p, skeleton, scene.image_id, score=float(rng.random()))
                d.pose3d = d.pose3d + rng.normal(scale=0.01, size=d.pose3d.shape)
                dets.append(d)

        report = evaluate_detections(dets, scenes, skeleton, pck_threshold_mm=100.0)
        by_image = {s.image_id: [d for d in dets if d.image_id == s.image_id] for s in scenes}
        gts = {s.image_id: s.boxes() for s in scenes}
        cases = [c for s in scenes for c in pose_eval_cases(by_image[s.image_id], s, skeleton)]
        assert report.ap == average_precision(by_image, gts)
        assert report.pck3d == pck3d(cases, skeleton.n_joints, 100.0).overall
        assert report.mpjpe_mm == mpjpe(cases)

        reversed_report = evaluate_detections(list(reversed(dets)), list(reversed(scenes)), skeleton,
                                              pck_threshold_mm=100.0)
        a, b = report.to_dict(), reversed_report.to_dict()
        assert b.pop("mpjpe_mm") == pytest.approx(a.pop("mpjpe_mm"), rel=1e-12)
        assert a == b
