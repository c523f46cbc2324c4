"""
Inference decoding: score thresholding, box/pose decoding, greedy NMS and
camera-frame root recovery.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from src.core.anchors import AnchorGrid
from src.core.geometry import Box2D, box_iou, decode_boxes, from_anchor_space
from src.core.losses import PredictionTensors
from src.core.synthdata import Camera
from src.exceptions import NumericalError, UsageError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Detection:
    """One decoded person"""
    score: float
    box: Box2D
    pose2d: np.ndarray                  # (N_K, 2) pixels
    pose3d: np.ndarray                  # (N_K, 3) normalised root-relative
    anchor_index: Tuple[int, int, int]
    image_id: str = ""
    root_translation: Optional[np.ndarray] = None
    residual: Optional[float] = None

    def sort_key(self):
        return (-self.score, self.anchor_index)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "image_id": self.image_id,
            "score": float(self.score),
            "box": self.box.as_array().tolist(),
            "pose2d": self.pose2d.tolist(),
            "pose3d": self.pose3d.tolist(),
            "anchor_index": list(self.anchor_index),
        }
        if self.root_translation is not None:
            data["root_translation"] = self.root_translation.tolist()
            data["residual"] = self.residual
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Detection":
        root = data.get("root_translation")
        return cls(
            score=float(data["score"]),
            box=Box2D.from_array(data["box"]),
            pose2d=np.array(data["pose2d"], dtype=np.float64).reshape(-1, 2),
            pose3d=np.array(data["pose3d"], dtype=np.float64).reshape(-1, 3),
            anchor_index=tuple(int(v) for v in data.get("anchor_index", (0, 0, 0))),
            image_id=str(data.get("image_id", "")),
            root_translation=None if root is None else np.array(root, dtype=np.float64),
            residual=data.get("residual"),
        )


def decode(pred: PredictionTensors, grid: AnchorGrid, score_threshold: float = 0.3,
           image_id: str = "") -> List[Detection]:
    """Every anchor with sigmoid score above the threshold, by descending score"""
    if not 0.0 <= score_threshold < 1.0:
        raise ValueError(f"score_threshold must be in [0, 1), got {score_threshold}")
    scores = expit(pred.cls_logits)
    keep = scores > score_threshold
    if not keep.any():
        return []

    # argwhere is lexicographic, so a stable sort leaves ties in anchor order
    indices = np.argwhere(keep)
    selected = scores[keep]
    order = np.argsort(-selected, kind="stable")

    anchors = grid.centers[keep]
    boxes = decode_boxes(anchors, pred.box_offsets[keep])
    poses2d = from_anchor_space(pred.pose2d[keep], anchors[:, None, :])
    poses3d = pred.pose3d[keep]

    return [
        Detection(
            score=float(selected[n]),
            box=Box2D.from_array(boxes[n]),
            pose2d=poses2d[n],
            pose3d=poses3d[n].copy(),
            anchor_index=tuple(int(v) for v in indices[n]),
            image_id=image_id,
        )
        for n in order
    ]


def nms(dets: List[Detection], iou_threshold: float = 0.5) -> List[Detection]:
    """Greedy box NMS; ties in score are resolved by anchor index"""
    if not dets:
        return []
    dets = sorted(dets, key=Detection.sort_key)
    boxes = np.stack([d.box.as_array() for d in dets])
    overlaps = box_iou(boxes, boxes)

    keep = []
    order = np.arange(len(dets))
    while order.size > 0:
        i = order[0]
        keep.append(i)
        ovr = overlaps[i, order[1:]]
        order = order[1:][ovr <= iou_threshold]
    return [dets[i] for i in keep]


# ============================================================
# Root translation
# ============================================================

@dataclass
class RootTranslation:
    translation: np.ndarray   # (3,) metres
    residual: float           # RMS reprojection error in pixels
    iterations: int
    converged: bool


def _reprojection(points: np.ndarray, observed: np.ndarray, camera: Camera):
    z = points[:, 2]
    u = camera.fx * points[:, 0] / z + camera.cx
    v = camera.fy * points[:, 1] / z + camera.cy
    residual = np.concatenate([u - observed[:, 0], v - observed[:, 1]])

    n = len(points)
    jac = np.zeros((2 * n, 3))
    jac[:n, 0] = camera.fx / z
    jac[:n, 2] = -camera.fx * points[:, 0] / z ** 2
    jac[n:, 1] = camera.fy / z
    jac[n:, 2] = -camera.fy * points[:, 1] / z ** 2
    return residual, jac


def recover_root_translation(pose3d: np.ndarray, pose2d: np.ndarray, camera: Camera,
                             visibility: Optional[np.ndarray] = None,
                             max_iters: int = 50, tol: float = 1e-12) -> RootTranslation:
    """
    Translation T placing a metric root-relative pose so that it reprojects
    onto `pose2d`.

    Starts from the linear solution of (u - cx)(Z + Tz) = fx (X + Tx) (and
    likewise for v), then refines the squared pixel error with Gauss-Newton.
    Returns the best iterate with `converged=False` if `max_iters` is hit.
    """
    pose3d = np.asarray(pose3d, dtype=np.float64)
    pose2d = np.asarray(pose2d, dtype=np.float64)
    mask = np.ones(len(pose3d), dtype=bool) if visibility is None else np.asarray(visibility, dtype=bool)
    if mask.sum() < 2:
        raise UsageError(f"Root recovery needs at least 2 visible joints, got {int(mask.sum())}")
    points, observed = pose3d[mask], pose2d[mask]

    du = observed[:, 0] - camera.cx
    dv = observed[:, 1] - camera.cy
    n = len(points)
    a = np.zeros((2 * n, 3))
    a[:n, 0] = camera.fx
    a[:n, 2] = -du
    a[n:, 1] = camera.fy
    a[n:, 2] = -dv
    b = np.concatenate([du * points[:, 2] - camera.fx * points[:, 0], dv * points[:, 2] - camera.fy * points[:, 1]])
    t, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3:
        raise NumericalError("Degenerate joint configuration for root recovery", term="root_translation",
                             details={"rank": int(rank)})

    def cost(translation):
        r, _ = _reprojection(points + translation, observed, camera)
        return float(r @ r)

    best_t, best_cost = t, cost(t)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        r, jac = _reprojection(points + t, observed, camera)
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        t = t + step
        if not np.all(np.isfinite(t)):
            raise NumericalError("Root recovery diverged", term="root_translation")
        c = cost(t)
        if c < best_cost:
            best_t, best_cost = t, c
        if float(step @ step) <= tol * max(1.0, float(t @ t)):
            converged = True
            break

    if not converged:
        logger.warning(f"Root recovery did not converge after {max_iters} iterations (cost {best_cost:.3e})")
    return RootTranslation(
        translation=best_t,
        residual=float(np.sqrt(best_cost / (2 * n))),
        iterations=iterations,
        converged=converged,
    )
