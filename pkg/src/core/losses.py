"""
Pixel-wise training losses and their analytic gradients.

Four maps are computed over the anchor grid: localisation (IoU of decoded
boxes), 2D pose (unit-square IoU of joints in anchor space), 3D pose
(squared distance of normalised root-relative joints) and classification
(binary cross-entropy against readout labels). The totals combine them with
trainable weights lambda = exp(s) per task, per anchor and per anchor-joint,
each paired with a -log(lambda) regulariser.

Readout labels depend on the current predictions but are treated as
constants when differentiating.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.core.anchors import AnchorGrid, MatchResult
from src.core.geometry import (
    decode_boxes,
    decode_boxes_backward,
    paired_iou_grad,
    to_anchor_space,
    unit_square_overlap_grad,
)

logger = logging.getLogger(__name__)

READOUT_THRESHOLD = 0.5
TASKS = ("cls", "loc", "pose2d", "pose3d")


class SelectionStrategy(str, Enum):
    """Rule deciding which anchors are labelled as readout locations"""
    PONO = "pono"
    BOX_AWARE = "box_aware"
    POSE_AWARE = "pose_aware"


class WeightingMode(str, Enum):
    """Which lambda groups are trained"""
    FIXED = "fixed"
    TASK = "task"
    TASK_ANCHOR = "task_anchor"
    FULL = "full"


PREDICTION_FIELDS = ("cls_logits", "box_offsets", "pose2d", "pose3d")
WEIGHT_FIELDS = ("s_task", "s_anchor_cls", "s_anchor_loc", "s_anchor_joint_2d", "s_anchor_joint_3d")


@dataclass(eq=False)
class PredictionTensors:
    """
    Dense model outputs for one image.

    Shapes: cls_logits (H, W, N_A), box_offsets (H, W, N_A, 4),
    pose2d (H, W, N_A, N_K, 2) in anchor space, pose3d (H, W, N_A, N_K, 3)
    normalised root-relative.
    """
    cls_logits: np.ndarray
    box_offsets: np.ndarray
    pose2d: np.ndarray
    pose3d: np.ndarray

    @classmethod
    def zeros(cls, grid: AnchorGrid, n_joints: int, cls_bias: float = 0.0) -> "PredictionTensors":
        h, w, a = grid.shape
        return cls(
            cls_logits=np.full((h, w, a), float(cls_bias)),
            box_offsets=np.zeros((h, w, a, 4)),
            pose2d=np.zeros((h, w, a, n_joints, 2)),
            pose3d=np.zeros((h, w, a, n_joints, 3)),
        )

    @property
    def n_joints(self) -> int:
        return self.pose3d.shape[3]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PREDICTION_FIELDS}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "PredictionTensors":
        return cls(**{name: np.asarray(arrays[name], dtype=np.float64) for name in PREDICTION_FIELDS})

    def copy(self) -> "PredictionTensors":
        return PredictionTensors.from_arrays({k: v.copy() for k, v in self.arrays().items()})

    def validate(self, grid: AnchorGrid, n_joints: int):
        h, w, a = grid.shape
        expected = {
            "cls_logits": (h, w, a),
            "box_offsets": (h, w, a, 4),
            "pose2d": (h, w, a, n_joints, 2),
            "pose3d": (h, w, a, n_joints, 3),
        }
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contains non-finite values")


@dataclass(eq=False)
class LossWeights:
    """Log-weights s; every lambda is exp(s)"""
    s_task: np.ndarray              # (4,) cls, loc, pose2d, pose3d
    s_anchor_cls: np.ndarray        # (N_A,)
    s_anchor_loc: np.ndarray        # (N_A,)
    s_anchor_joint_2d: np.ndarray   # (N_A, N_K)
    s_anchor_joint_3d: np.ndarray   # (N_A, N_K)

    @classmethod
    def zeros(cls, n_anchors: int, n_joints: int) -> "LossWeights":
        return cls(
            s_task=np.zeros(len(TASKS)),
            s_anchor_cls=np.zeros(n_anchors),
            s_anchor_loc=np.zeros(n_anchors),
            s_anchor_joint_2d=np.zeros((n_anchors, n_joints)),
            s_anchor_joint_3d=np.zeros((n_anchors, n_joints)),
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_FIELDS}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "LossWeights":
        return cls(**{name: np.asarray(arrays[name], dtype=np.float64) for name in WEIGHT_FIELDS})

    def copy(self) -> "LossWeights":
        return LossWeights.from_arrays({k: v.copy() for k, v in self.arrays().items()})

    def task_lambda(self, task: str) -> float:
        return float(np.exp(self.s_task[TASKS.index(task)]))

    @staticmethod
    def trainable(mode: WeightingMode) -> Dict[str, bool]:
        mode = WeightingMode(mode)
        anchors = mode in (WeightingMode.TASK_ANCHOR, WeightingMode.FULL)
        return {
            "s_task": mode != WeightingMode.FIXED,
            "s_anchor_cls": anchors,
            "s_anchor_loc": anchors,
            "s_anchor_joint_2d": mode == WeightingMode.FULL,
            "s_anchor_joint_3d": mode == WeightingMode.FULL,
        }


@dataclass
class LossBreakdown:
    """Weighted task terms of the total loss plus diagnostics"""
    cls: float
    loc: float
    pose2d: float
    pose3d: float
    total: float
    raw: Dict[str, float] = field(default_factory=dict)
    regularizers: Dict[str, float] = field(default_factory=dict)
    n_positive: int = 0
    n_readout: int = 0

    def to_dict(self) -> Dict[str, float]:
        out = {
            "cls": self.cls,
            "loc": self.loc,
            "pose2d": self.pose2d,
            "pose3d": self.pose3d,
            "total": self.total,
            "n_positive": self.n_positive,
            "n_readout": self.n_readout,
        }
        out.update({f"raw_{k}": v for k, v in self.raw.items()})
        out.update({f"reg_{k}": v for k, v in self.regularizers.items()})
        return out


@dataclass(eq=False)
class LossGradients:
    predictions: PredictionTensors
    weights: LossWeights


@dataclass(eq=False)
class RegressionTargets:
    """Per-anchor supervision gathered from a MatchResult; reusable across steps"""
    anchors: np.ndarray       # (H, W, N_A, 4) centre form
    boxes: np.ndarray         # (H, W, N_A, 4) matched boxes
    pose2d: np.ndarray        # (H, W, N_A, N_K, 2) anchor space
    pose3d: np.ndarray        # (H, W, N_A, N_K, 3) normalised
    visible: np.ndarray       # (H, W, N_A, N_K) matched and visible
    positive: np.ndarray      # (H, W, N_A)
    joint_mask: np.ndarray    # (H, W, N_A, N_K) positive and visible


def regression_targets(m: MatchResult, grid: AnchorGrid) -> RegressionTargets:
    anchors = grid.centers
    visible = m.matched_visibility & m.matched[..., None]
    return RegressionTargets(
        anchors=anchors,
        boxes=m.matched_boxes,
        pose2d=to_anchor_space(m.matched_poses2d, anchors[..., None, :]),
        pose3d=m.matched_targets3d,
        visible=visible,
        positive=m.positive_mask,
        joint_mask=visible & m.positive_mask[..., None],
    )


# ============================================================
# 3D normalisation
# ============================================================

def bone_length_sum(pose: np.ndarray, edges: Sequence[Tuple[int, int]]) -> float:
    pose = np.asarray(pose, dtype=np.float64)
    parents = [p for p, _ in edges]
    children = [c for _, c in edges]
    return float(np.linalg.norm(pose[children] - pose[parents], axis=-1).sum())


def normalize_pose3d(pose: np.ndarray, edges: Sequence[Tuple[int, int]], root_index: int) -> np.ndarray:
    """Translate the root to the origin and scale the skeleton to unit bone sum"""
    pose = np.asarray(pose, dtype=np.float64)
    total = bone_length_sum(pose, edges)
    if not (np.isfinite(total) and total > 0):
        raise ValueError("Cannot normalise a pose whose bones all have zero length")
    return (pose - pose[root_index]) / total


# ============================================================
# Per-term maps (value, overlap, gradient)
# ============================================================

def _loc_terms(pred: PredictionTensors, t: RegressionTargets):
    pred_boxes = decode_boxes(t.anchors, pred.box_offsets)
    overlap, d_overlap = paired_iou_grad(pred_boxes, t.boxes)
    residual = 1.0 - overlap
    loss = np.where(t.positive, residual ** 2, 0.0)
    g_corners = np.where(t.positive[..., None], (-2.0 * residual)[..., None] * d_overlap, 0.0)
    grad = decode_boxes_backward(t.anchors, pred.box_offsets, g_corners)
    return loss, overlap, grad


def _pose2d_terms(pred: PredictionTensors, t: RegressionTargets):
    overlap, d_overlap = unit_square_overlap_grad(pred.pose2d - t.pose2d)
    overlap = np.where(t.visible, overlap, 0.0)
    residual = 1.0 - overlap
    loss = np.where(t.joint_mask, residual ** 2, 0.0)
    grad = np.where(t.joint_mask[..., None], (-2.0 * residual)[..., None] * d_overlap, 0.0)
    return loss, overlap, grad


def _pose3d_terms(pred: PredictionTensors, t: RegressionTargets):
    diff = pred.pose3d - t.pose3d
    loss = np.where(t.joint_mask, np.sum(diff ** 2, axis=-1), 0.0)
    grad = np.where(t.joint_mask[..., None], 2.0 * diff, 0.0)
    return loss, grad


def _cls_terms(logits: np.ndarray, labels: np.ndarray):
    target = labels.astype(np.float64)
    loss = np.logaddexp(0.0, logits) - logits * target
    grad = expit(logits) - target
    return loss, grad


def mean_pose_overlap(overlap: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Mean per-joint overlap over visible joints; 0 where none is visible"""
    count = visible.sum(axis=-1)
    total = np.where(visible, overlap, 0.0).sum(axis=-1)
    out = np.zeros_like(total)
    np.divide(total, count, out=out, where=count > 0)
    return out


def loc_loss_map(pred: PredictionTensors, m: MatchResult, grid: AnchorGrid) -> Tuple[np.ndarray, np.ndarray]:
    """(1 - O_hat)^2 at positive anchors and the predicted-box overlap map O_hat"""
    loss, overlap, _ = _loc_terms(pred, regression_targets(m, grid))
    return loss, overlap


def pose2d_loss_map(pred: PredictionTensors, m: MatchResult, grid: AnchorGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Per-joint (1 - O2D_hat)^2 at positive anchors and the per-joint overlap map"""
    loss, overlap, _ = _pose2d_terms(pred, regression_targets(m, grid))
    return loss, overlap


def pose3d_loss_map(pred: PredictionTensors, m: MatchResult) -> np.ndarray:
    """Per-joint squared distance to the normalised target at positive anchors"""
    joint_mask = m.positive_mask[..., None] & m.matched_visibility
    diff = pred.pose3d - m.matched_targets3d
    return np.where(joint_mask, np.sum(diff ** 2, axis=-1), 0.0)


def readout_labels(m: MatchResult, overlap: np.ndarray,
                   strategy: SelectionStrategy = SelectionStrategy.POSE_AWARE) -> np.ndarray:
    """
    Binary readout labels.

    `overlap` is the mean 2D joint overlap for the pose-aware rule and the
    predicted-box overlap for the box-aware rule; it is ignored by the PONO
    rule. The result carries no gradient.
    """
    strategy = SelectionStrategy(strategy)
    if strategy == SelectionStrategy.PONO:
        return m.pono > READOUT_THRESHOLD
    return (m.pono * np.asarray(overlap)) > READOUT_THRESHOLD


def cls_loss_map(pred: PredictionTensors, labels: np.ndarray) -> np.ndarray:
    """Binary cross-entropy from logits, stable for any finite logit"""
    loss, _ = _cls_terms(pred.cls_logits, labels)
    return loss


# ============================================================
# Weighted totals
# ============================================================

def evaluate(pred: PredictionTensors, m: MatchResult, grid: AnchorGrid, weights: LossWeights,
             strategy: SelectionStrategy = SelectionStrategy.POSE_AWARE,
             targets: Optional[RegressionTargets] = None,
             with_gradients: bool = True) -> Tuple[LossBreakdown, Optional[LossGradients]]:
    """
    Total loss and (optionally) its gradient w.r.t. predictions and log-weights.

    When no anchor is positive, the loc/2D/3D weighted sums are 0 and only
    their regularisers remain.
    """
    t = targets if targets is not None else regression_targets(m, grid)
    h, w, n_anchors = grid.shape
    n_joints = pred.n_joints

    loc_map, box_overlap, g_loc = _loc_terms(pred, t)
    p2d_map, joint_overlap, g_p2d = _pose2d_terms(pred, t)
    p3d_map, g_p3d = _pose3d_terms(pred, t)

    strategy = SelectionStrategy(strategy)
    if strategy == SelectionStrategy.BOX_AWARE:
        labels = readout_labels(m, box_overlap, strategy)
    else:
        labels = readout_labels(m, mean_pose_overlap(joint_overlap, t.visible), strategy)
    cls_map, g_cls = _cls_terms(pred.cls_logits, labels)

    n_pos = int(t.positive.sum())
    lam_task = np.exp(weights.s_task)
    lam_cls = np.exp(weights.s_anchor_cls)
    lam_loc = np.exp(weights.s_anchor_loc)
    lam_2d = np.exp(weights.s_anchor_joint_2d)
    lam_3d = np.exp(weights.s_anchor_joint_3d)

    x_cls = cls_map.sum(axis=(0, 1))
    x_loc = loc_map.sum(axis=(0, 1))
    x_2d = p2d_map.sum(axis=(0, 1))
    x_3d = p3d_map.sum(axis=(0, 1))

    c_cls = 1.0 / (h * w * n_anchors)
    c_loc = 1.0 / n_pos if n_pos else 0.0
    c_pose = 1.0 / (n_joints * n_pos) if n_pos else 0.0

    # weighted sums, split per anchor (and joint) for the s-gradients
    part_cls = lam_task[0] * c_cls * lam_cls * x_cls
    part_loc = lam_task[1] * c_loc * lam_loc * x_loc
    part_2d = lam_task[2] * c_pose * lam_2d * x_2d
    part_3d = lam_task[3] * c_pose * lam_3d * x_3d

    reg = {
        "cls": float(-weights.s_task[0] - weights.s_anchor_cls.mean()),
        "loc": float(-weights.s_task[1] - weights.s_anchor_loc.mean()),
        "pose2d": float(-weights.s_task[2] - weights.s_anchor_joint_2d.mean()),
        "pose3d": float(-weights.s_task[3] - weights.s_anchor_joint_3d.mean()),
    }
    terms = {
        "cls": float(part_cls.sum()) + reg["cls"],
        "loc": float(part_loc.sum()) + reg["loc"],
        "pose2d": float(part_2d.sum()) + reg["pose2d"],
        "pose3d": float(part_3d.sum()) + reg["pose3d"],
    }
    breakdown = LossBreakdown(
        cls=terms["cls"],
        loc=terms["loc"],
        pose2d=terms["pose2d"],
        pose3d=terms["pose3d"],
        total=terms["cls"] + terms["loc"] + terms["pose2d"] + terms["pose3d"],
        raw={
            "cls": float(x_cls.sum()),
            "loc": float(x_loc.sum()),
            "pose2d": float(x_2d.sum()),
            "pose3d": float(x_3d.sum()),
        },
        regularizers=reg,
        n_positive=n_pos,
        n_readout=int(labels.sum()),
    )
    if not with_gradients:
        return breakdown, None

    grad_pred = PredictionTensors(
        cls_logits=lam_task[0] * c_cls * lam_cls[None, None, :] * g_cls,
        box_offsets=lam_task[1] * c_loc * lam_loc[None, None, :, None] * g_loc,
        pose2d=lam_task[2] * c_pose * lam_2d[None, None, :, :, None] * g_p2d,
        pose3d=lam_task[3] * c_pose * lam_3d[None, None, :, :, None] * g_p3d,
    )
    grad_weights = LossWeights(
        s_task=np.array([part_cls.sum(), part_loc.sum(), part_2d.sum(), part_3d.sum()]) - 1.0,
        s_anchor_cls=part_cls - 1.0 / n_anchors,
        s_anchor_loc=part_loc - 1.0 / n_anchors,
        s_anchor_joint_2d=part_2d - 1.0 / (n_anchors * n_joints),
        s_anchor_joint_3d=part_3d - 1.0 / (n_anchors * n_joints),
    )
    return breakdown, LossGradients(predictions=grad_pred, weights=grad_weights)


def total_loss(pred: PredictionTensors, m: MatchResult, grid: AnchorGrid, weights: LossWeights,
               strategy: SelectionStrategy = SelectionStrategy.POSE_AWARE) -> LossBreakdown:
    breakdown, _ = evaluate(pred, m, grid, weights, strategy, with_gradients=False)
    return breakdown


def gradients(pred: PredictionTensors, m: MatchResult, grid: AnchorGrid, weights: LossWeights,
              strategy: SelectionStrategy = SelectionStrategy.POSE_AWARE) -> LossGradients:
    _, grads = evaluate(pred, m, grid, weights, strategy)
    return grads
