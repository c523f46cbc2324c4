import math

import numpy as np
import pytest

from src.core.geometry import (
    OFFSET_CLAMP,
    AnchorBox,
    Box2D,
    Point2D,
    anchor_to_image,
    box_iou,
    decode_box,
    decode_boxes,
    decode_boxes_backward,
    encode_boxes,
    image_to_anchor,
    iou,
    paired_iou_grad,
    unit_square_iou,
)

from helpers import assert_gradients_match, central_difference


def random_box(rng, lo=0.0, hi=100.0):
    x = np.sort(rng.uniform(lo, hi, 2))
    y = np.sort(rng.uniform(lo, hi, 2))
    return Box2D(x[0], y[0], x[1], y[1])


class TestBox2D:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Box2D(2, 0, 1, 1)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Box2D(0, 0, float("nan"), 1)

    def test_area_and_center(self):
        b = Box2D(1, 2, 5, 4)
        assert b.area == 8
        assert b.center == Point2D(3, 3)


class TestIoU:
    def test_identical(self):
        b = Box2D(0, 0, 3, 4)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box2D(0, 0, 1, 1), Box2D(2, 2, 3, 3)) == 0.0

    def test_partial_overlap(self):
        assert iou(Box2D(0, 0, 2, 2), Box2D(1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate_boxes_give_zero(self):
        assert iou(Box2D(1, 1, 1, 1), Box2D(1, 1, 1, 1)) == 0.0

    def test_symmetric_bounded_scale_invariant(self, rng):
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            value = iou(a, b)
            assert 0.0 <= value <= 1.0
            assert value == pytest.approx(iou(b, a), abs=1e-15)
            assert iou(a.scaled(3.7), b.scaled(3.7)) == pytest.approx(value, abs=1e-12)

    def test_matrix_matches_scalar(self, rng):
        a = [random_box(rng) for _ in range(5)]
        b = [random_box(rng) for _ in range(4)]
        m = box_iou(a, b)
        assert m.shape == (5, 4)
        for i in range(5):
            for j in range(4):
                assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-15)


class TestUnitSquareIoU:
    def test_identity(self):
        assert unit_square_iou(Point2D(0.3, -0.2), Point2D(0.3, -0.2)) == 1.0

    def test_tangent(self):
        assert unit_square_iou(Point2D(0, 0), Point2D(1, 0)) == 0.0

    def test_half_offset(self):
        assert unit_square_iou(Point2D(0, 0), Point2D(0.5, 0)) == pytest.approx(1 / 3)

    def test_monotone_and_symmetric(self, rng):
        for _ in range(100):
            p = Point2D(*rng.normal(size=2))
            q = Point2D(*rng.normal(size=2))
            assert unit_square_iou(p, q) == unit_square_iou(q, p)
            dx, dy = abs(q.x - p.x), abs(q.y - p.y)
            further = Point2D(p.x + dx + 0.1, p.y + dy)
            assert unit_square_iou(p, further) <= unit_square_iou(p, Point2D(p.x + dx, p.y + dy))


class TestAnchorSpace:
    def test_center_maps_to_origin(self):
        a = AnchorBox(10, 10, 4, 2)
        assert image_to_anchor(Point2D(10, 10), a) == Point2D(0, 0)

    def test_scaled_offset(self):
        a = AnchorBox(10, 10, 4, 2)
        assert image_to_anchor(Point2D(12, 11), a) == Point2D(0.5, 0.5)

    def test_round_trip(self, rng):
        for _ in range(50):
            a = AnchorBox(*rng.uniform(0, 50, 2), *rng.uniform(1, 30, 2))
            p = Point2D(*rng.uniform(-20, 80, 2))
            back = anchor_to_image(image_to_anchor(p, a), a)
            assert back.x == pytest.approx(p.x, abs=1e-9)
            assert back.y == pytest.approx(p.y, abs=1e-9)


class TestDecodeBox:
    def test_zero_offsets_return_anchor(self):
        a = AnchorBox(20, 30, 8, 16)
        assert decode_box(a, [0, 0, 0, 0]) == a.to_box()

    def test_log_two_doubles_width(self):
        a = AnchorBox(20, 30, 8, 16)
        b = decode_box(a, [0, 0, math.log(2), 0])
        assert b.width == pytest.approx(16)
        assert b.height == pytest.approx(16)
        assert b.center.x == pytest.approx(20)

    def test_inverse_offsets_hit_target(self, rng):
        for _ in range(50):
            a = AnchorBox(*rng.uniform(0, 50, 2), *rng.uniform(1, 30, 2))
            target = random_box(rng, 0, 80)
            if target.width < 1e-3 or target.height < 1e-3:
                continue
            t = encode_boxes(a.as_array(), target.as_array())
            np.testing.assert_allclose(decode_box(a, t).as_array(), target.as_array(), atol=1e-9)

    def test_size_offsets_are_clamped(self):
        a = AnchorBox(0, 0, 2, 2)
        b = decode_box(a, [0, 0, 100.0, -100.0])
        assert b.width == pytest.approx(2 * math.exp(OFFSET_CLAMP))
        assert b.height == pytest.approx(2 * math.exp(-OFFSET_CLAMP))

    @pytest.mark.parametrize("offsets", [[0, 0, float("inf"), 0], [0, 0, 0], [float("nan")] * 4])
    def test_rejects_bad_offsets(self, offsets):
        with pytest.raises(ValueError):
            decode_box(AnchorBox(0, 0, 1, 1), offsets)


class TestIoUGradient:
    def _configuration(self, rng):
        """Anchor, offsets and target with every edge comfortably away from a kink"""
        while True:
            anchor = np.array([*rng.uniform(10, 40, 2), *rng.uniform(5, 20, 2)])
            target = np.array([*rng.uniform(5, 30, 2), 0.0, 0.0])
            target[2:] = target[:2] + rng.uniform(5, 25, 2)
            offsets = np.array([*rng.uniform(-0.5, 0.5, 2), *rng.uniform(-1, 1, 2)])
            pred = decode_boxes(anchor, offsets)
            value, _ = paired_iou_grad(pred, target)
            edges = np.abs(pred[:, None] - target[None, :]).min()
            if value > 0.05 and edges > 1e-3:
                return anchor, offsets, target

    def test_matches_finite_differences(self, rng):
        for _ in range(100):
            anchor, offsets, target = self._configuration(rng)
            _, d_corners = paired_iou_grad(decode_boxes(anchor, offsets), target)
            analytic = decode_boxes_backward(anchor, offsets, d_corners)

            def f():
                return float(paired_iou_grad(decode_boxes(anchor, offsets), target)[0])

            assert_gradients_match(analytic, central_difference(f, offsets))

    def test_value_agrees_with_iou(self, rng):
        for _ in range(50):
            a, b = random_box(rng), random_box(rng)
            value, _ = paired_iou_grad(a.as_array(), b.as_array())
            assert float(value) == pytest.approx(iou(a, b), abs=1e-12)

    def test_batched_edge_signs(self):
        pred = np.array([[1.0, 1.0, 3.0, 3.0], [0.0, 0.0, 4.0, 4.0]])
        target = np.array([[0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0]])
        value, grad = paired_iou_grad(pred, target)
        np.testing.assert_allclose(value, [1 / 7, 1 / 16])
        # first pair: pred's min edges bind; second pair: target lies inside pred
        np.testing.assert_allclose(grad[0], [-6 / 49, -6 / 49, -2 / 49, -2 / 49])
        np.testing.assert_allclose(grad[1], [1 / 64, 1 / 64, -1 / 64, -1 / 64])
