"""
Geometric primitives: boxes, IoU, unit-square joint overlap and the
anchor-space transforms.

Boxes are stored in corner form (xmin, ymin, xmax, ymax); anchors in centre
form (center_x, center_y, width, height). The array helpers broadcast over
leading axes so the same code serves one box or a whole anchor grid.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np

# tw / th are clamped before exponentiation
OFFSET_CLAMP = 8.0


class Point2D(NamedTuple):
    x: float
    y: float


class Point3D(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box in pixel coordinates"""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Box coordinates must be finite: {values}")
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise ValueError(f"Invalid box (max < min): {values}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point2D:
        return Point2D((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax], dtype=np.float64)

    def scaled(self, factor: float) -> "Box2D":
        return Box2D(self.xmin * factor, self.ymin * factor, self.xmax * factor, self.ymax * factor)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box2D":
        xmin, ymin, xmax, ymax = (float(v) for v in values)
        return cls(xmin, ymin, xmax, ymax)


@dataclass(frozen=True)
class AnchorBox:
    """Prior box in centre form"""
    center_x: float
    center_y: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"Anchor size must be positive, got {self.width}x{self.height}")

    def to_box(self) -> Box2D:
        return Box2D(
            self.center_x - self.width / 2.0,
            self.center_y - self.height / 2.0,
            self.center_x + self.width / 2.0,
            self.center_y + self.height / 2.0,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.center_x, self.center_y, self.width, self.height], dtype=np.float64)


BoxLike = Union[Box2D, Sequence[float], np.ndarray]


def as_box_array(boxes) -> np.ndarray:
    """Stack Box2D objects or corner arrays into an (N, 4) float array"""
    if isinstance(boxes, Box2D):
        return boxes.as_array()[None, :]
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64, copy=False).reshape(-1, 4)
    rows = [b.as_array() if isinstance(b, Box2D) else np.asarray(b, dtype=np.float64) for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack(rows).reshape(-1, 4)


# ============================================================
# IoU
# ============================================================

def box_iou(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU matrix (N, M) between two sets of corner-form boxes"""
    a = as_box_array(boxes_a)
    b = as_box_array(boxes_b)

    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])

    iw = np.maximum(ix2 - ix1, 0.0)
    ih = np.maximum(iy2 - iy1, 0.0)
    inter = iw * ih

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes; 0 when the union is empty"""
    return float(box_iou(a, b)[0, 0])


def paired_iou_grad(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Element-wise IoU between paired boxes and its gradient w.r.t. `pred`.

    Both inputs are (..., 4) corner arrays. Where an edge of `pred` coincides
    with the matching edge of `target` the derivative is taken one-sided,
    treating the target edge as the binding one.

    Returns:
        (iou (...), d iou / d pred (..., 4))
    """
    x1, y1, x2, y2 = np.moveaxis(np.asarray(pred, dtype=np.float64), -1, 0)
    gx1, gy1, gx2, gy2 = np.moveaxis(np.asarray(target, dtype=np.float64), -1, 0)

    iw = np.minimum(x2, gx2) - np.maximum(x1, gx1)
    ih = np.minimum(y2, gy2) - np.maximum(y1, gy1)
    overlap = (iw > 0) & (ih > 0)
    iw = np.where(overlap, iw, 0.0)
    ih = np.where(overlap, ih, 0.0)
    inter = iw * ih

    pw = x2 - x1
    ph = y2 - y1
    union = pw * ph + (gx2 - gx1) * (gy2 - gy1) - inter
    valid = union > 0
    safe_union = np.where(valid, union, 1.0)
    value = np.where(valid, inter / safe_union, 0.0)

    d_inter = np.stack([
        np.where(x1 > gx1, -ih, 0.0),
        np.where(y1 > gy1, -iw, 0.0),
        np.where(x2 < gx2, ih, 0.0),
        np.where(y2 < gy2, iw, 0.0),
    ], axis=-1)
    d_area = np.stack([-ph, -pw, ph, pw], axis=-1)
    d_union = d_area - d_inter

    grad = (d_inter * union[..., None] - inter[..., None] * d_union) / (safe_union ** 2)[..., None]
    grad = np.where(valid[..., None], grad, 0.0)
    return value, grad


# ============================================================
# Unit-square joint overlap
# ============================================================

def unit_square_overlap(delta) -> np.ndarray:
    """IoU of two unit squares whose centres differ by `delta` (..., 2)"""
    side = np.maximum(1.0 - np.abs(np.asarray(delta, dtype=np.float64)), 0.0)
    inter = side[..., 0] * side[..., 1]
    return inter / (2.0 - inter)


def unit_square_overlap_grad(delta) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-square IoU and its gradient w.r.t. `delta`; zero at delta = 0 on that axis"""
    delta = np.asarray(delta, dtype=np.float64)
    side = np.maximum(1.0 - np.abs(delta), 0.0)
    inter = side[..., 0] * side[..., 1]
    value = inter / (2.0 - inter)

    d_value_d_inter = 2.0 / (2.0 - inter) ** 2
    d_side = -np.sign(delta) * (side > 0)
    d_inter = np.stack([d_side[..., 0] * side[..., 1], d_side[..., 1] * side[..., 0]], axis=-1)
    return value, d_value_d_inter[..., None] * d_inter


def unit_square_iou(p: Point2D, q: Point2D) -> float:
    """IoU of axis-aligned unit squares centred at p and q (anchor space)"""
    return float(unit_square_overlap((q[0] - p[0], q[1] - p[1])))


# ============================================================
# Anchor space
# ============================================================

def to_anchor_space(points, anchors) -> np.ndarray:
    """Map pixel points (..., 2) into the frame of centre-form anchors (..., 4)"""
    points = np.asarray(points, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    return (points - anchors[..., 0:2]) / anchors[..., 2:4]


def from_anchor_space(points, anchors) -> np.ndarray:
    """Inverse of `to_anchor_space`"""
    points = np.asarray(points, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    return points * anchors[..., 2:4] + anchors[..., 0:2]


def image_to_anchor(p: Point2D, a: AnchorBox) -> Point2D:
    return Point2D((p[0] - a.center_x) / a.width, (p[1] - a.center_y) / a.height)


def anchor_to_image(p: Point2D, a: AnchorBox) -> Point2D:
    return Point2D(p[0] * a.width + a.center_x, p[1] * a.height + a.center_y)


# ============================================================
# Box offsets
# ============================================================

def decode_boxes(anchors, offsets) -> np.ndarray:
    """Apply (tx, ty, tw, th) offsets to centre-form anchors; returns corners (..., 4)"""
    anchors = np.asarray(anchors, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    cx = anchors[..., 0] + offsets[..., 0] * anchors[..., 2]
    cy = anchors[..., 1] + offsets[..., 1] * anchors[..., 3]
    w = anchors[..., 2] * np.exp(np.clip(offsets[..., 2], -OFFSET_CLAMP, OFFSET_CLAMP))
    h = anchors[..., 3] * np.exp(np.clip(offsets[..., 3], -OFFSET_CLAMP, OFFSET_CLAMP))
    return np.stack([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0], axis=-1)


def decode_boxes_backward(anchors, offsets, grad_corners) -> np.ndarray:
    """Chain a gradient w.r.t. decoded corners back to the offsets"""
    anchors = np.asarray(anchors, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    g = np.asarray(grad_corners, dtype=np.float64)

    tw, th = offsets[..., 2], offsets[..., 3]
    w = anchors[..., 2] * np.exp(np.clip(tw, -OFFSET_CLAMP, OFFSET_CLAMP))
    h = anchors[..., 3] * np.exp(np.clip(th, -OFFSET_CLAMP, OFFSET_CLAMP))
    free_w = (tw > -OFFSET_CLAMP) & (tw < OFFSET_CLAMP)
    free_h = (th > -OFFSET_CLAMP) & (th < OFFSET_CLAMP)

    return np.stack([
        anchors[..., 2] * (g[..., 0] + g[..., 2]),
        anchors[..., 3] * (g[..., 1] + g[..., 3]),
        free_w * (w / 2.0) * (g[..., 2] - g[..., 0]),
        free_h * (h / 2.0) * (g[..., 3] - g[..., 1]),
    ], axis=-1)


def encode_boxes(anchors, boxes) -> np.ndarray:
    """Offsets that decode `anchors` exactly onto corner-form `boxes`"""
    anchors = np.asarray(anchors, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    bw = boxes[..., 2] - boxes[..., 0]
    bh = boxes[..., 3] - boxes[..., 1]
    bcx = (boxes[..., 0] + boxes[..., 2]) / 2.0
    bcy = (boxes[..., 1] + boxes[..., 3]) / 2.0
    return np.stack([
        (bcx - anchors[..., 0]) / anchors[..., 2],
        (bcy - anchors[..., 1]) / anchors[..., 3],
        np.log(bw / anchors[..., 2]),
        np.log(bh / anchors[..., 3]),
    ], axis=-1)


def decode_box(a: AnchorBox, offsets: Sequence[float]) -> Box2D:
    """Decode one anchor with (tx, ty, tw, th); tw and th are clamped to [-8, 8]"""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (4,) or not np.all(np.isfinite(offsets)):
        raise ValueError(f"Offsets must be 4 finite values, got {offsets!r}")
    return Box2D.from_array(decode_boxes(a.as_array(), offsets))
