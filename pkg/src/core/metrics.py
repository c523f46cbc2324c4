"""
Detection and 3D pose evaluation.

Detection quality is PASCAL-VOC average precision with all-point
interpolation. Pose quality is measured on detections paired to ground truth
by box overlap: predicted normalised poses are rescaled by the ground-truth
bone-length sum and aligned at the root before MPJPE and 3DPCK are computed.
Undetected people count as fully wrong in 3DPCK and are left out of MPJPE.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.config import METERS_TO_MM, PCK_THRESHOLD_MM
from src.core.decode import Detection
from src.core.geometry import Box2D, as_box_array, box_iou
from src.core.losses import bone_length_sum
from src.core.synthdata import SceneSample, Skeleton, default_skeleton

logger = logging.getLogger(__name__)

PAIRING_MIN_IOU = 0.1

# (lower, upper, label) in metres of ground-truth root depth
DISTANCE_BINS: Tuple[Tuple[float, float, str], ...] = (
    (0.0, 10.0, "<10"),
    (10.0, 20.0, "10-20"),
    (20.0, 30.0, "20-30"),
    (30.0, 40.0, "30-40"),
    (40.0, math.inf, ">40"),
)

JOINT_GROUPS: Dict[str, Tuple[str, ...]] = {
    "head": ("head",),
    "neck": ("neck",),
    "shoulders": ("l_shoulder", "r_shoulder"),
    "elbows": ("l_elbow", "r_elbow"),
    "wrists": ("l_wrist", "r_wrist"),
    "pelvis": ("pelvis",),
    "hips": ("l_hip", "r_hip"),
    "knees": ("l_knee", "r_knee"),
    "ankles": ("l_ankle", "r_ankle"),
}


# ============================================================
# Average precision
# ============================================================

@dataclass
class PrecisionRecall:
    scores: np.ndarray
    true_positive: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_ground_truths: int
    ap: float
    defined: bool


def voc_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the all-point interpolated precision-recall curve"""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def precision_recall(dets: Mapping[str, Sequence[Detection]],
                     gts: Mapping[str, Sequence[Box2D]],
                     iou_threshold: float = 0.5) -> PrecisionRecall:
    """
    Greedy matching in descending score order over all images.

    A detection is a true positive when its best-overlapping still-unmatched
    ground truth in the same image reaches `iou_threshold`.
    """
    flat = [(image_id, d) for image_id, items in dets.items() for d in items]
    flat.sort(key=lambda item: (-item[1].score, item[0], item[1].anchor_index))
    n_gt = sum(len(boxes) for boxes in gts.values())

    gt_arrays = {image_id: as_box_array(list(boxes)) for image_id, boxes in gts.items()}
    taken = {image_id: np.zeros(len(boxes), dtype=bool) for image_id, boxes in gts.items()}

    tp = np.zeros(len(flat), dtype=bool)
    for n, (image_id, det) in enumerate(flat):
        boxes = gt_arrays.get(image_id)
        if boxes is None or len(boxes) == 0:
            continue
        overlaps = box_iou(det.box.as_array(), boxes)[0]
        overlaps[taken[image_id]] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold:
            taken[image_id][best] = True
            tp[n] = True

    scores = np.array([d.score for _, d in flat], dtype=np.float64)
    tp_cum = np.cumsum(tp).astype(np.float64)
    fp_cum = np.cumsum(~tp).astype(np.float64)
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)

    if n_gt == 0:
        logger.warning("Average precision is undefined without ground truths; reporting 0")
        return PrecisionRecall(scores, tp, precision, np.zeros_like(tp_cum), 0, 0.0, False)

    recall = tp_cum / n_gt
    return PrecisionRecall(scores, tp, precision, recall, n_gt, voc_ap(recall, precision), True)


def average_precision(dets: Mapping[str, Sequence[Detection]],
                      gts: Mapping[str, Sequence[Box2D]],
                      iou_threshold: float = 0.5) -> float:
    return precision_recall(dets, gts, iou_threshold).ap


# ============================================================
# Pose pairing
# ============================================================

@dataclass
class PosePairing:
    pairs: List[Tuple[int, int]]        # (detection index, ground-truth index)
    missed: List[int]                   # unpaired ground truths
    unpaired_detections: List[int]


def match_for_pose_eval(det_boxes, gt_boxes, min_iou: float = PAIRING_MIN_IOU) -> PosePairing:
    """Greedy pairing by descending box IoU; each side used at most once"""
    det_arr = as_box_array(det_boxes)
    gt_arr = as_box_array(gt_boxes)
    n_det, n_gt = len(det_arr), len(gt_arr)
    if n_det == 0 or n_gt == 0:
        return PosePairing([], list(range(n_gt)), list(range(n_det)))

    overlaps = box_iou(det_arr, gt_arr)
    di, gi = np.nonzero(overlaps > min_iou)
    # descending IoU, ties by detection then ground-truth index
    order = np.lexsort((gi, di, -overlaps[di, gi]))

    used_det = np.zeros(n_det, dtype=bool)
    used_gt = np.zeros(n_gt, dtype=bool)
    pairs = []
    for k in order:
        d, g = int(di[k]), int(gi[k])
        if used_det[d] or used_gt[g]:
            continue
        used_det[d] = used_gt[g] = True
        pairs.append((d, g))
    return PosePairing(
        pairs=pairs,
        missed=[int(g) for g in np.flatnonzero(~used_gt)],
        unpaired_detections=[int(d) for d in np.flatnonzero(~used_det)],
    )


# ============================================================
# MPJPE / 3DPCK
# ============================================================

def rescale_prediction(pred: np.ndarray, gt_pose3d: np.ndarray, edges: Sequence[Tuple[int, int]],
                       root_index: int) -> np.ndarray:
    """Scale a normalised prediction to the GT bone sum and move its root onto the GT root"""
    pred = np.asarray(pred, dtype=np.float64)
    gt_pose3d = np.asarray(gt_pose3d, dtype=np.float64)
    scale = bone_length_sum(gt_pose3d, edges)
    return (pred - pred[root_index]) * scale + gt_pose3d[root_index]


def joint_errors_mm(pred_metric: np.ndarray, gt_pose3d: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(pred_metric) - np.asarray(gt_pose3d), axis=-1) * METERS_TO_MM


@dataclass
class PoseEvalCase:
    """One ground-truth person: per-joint errors when paired, None when missed"""
    errors_mm: Optional[np.ndarray]
    root_depth_m: float
    n_joints: int

    @property
    def missed(self) -> bool:
        return self.errors_mm is None


@dataclass
class Pck3DResult:
    overall: float
    per_joint: List[float]
    per_distance_bin: List[Tuple[str, Optional[float]]]
    threshold_mm: float


def mpjpe(cases: Iterable[PoseEvalCase]) -> Optional[float]:
    """Mean joint error over paired people; None when nothing was paired"""
    errors = [c.errors_mm for c in cases if not c.missed]
    if not errors:
        return None
    return float(np.concatenate(errors).mean())


def _correct_joints(case: PoseEvalCase, threshold_mm: float) -> np.ndarray:
    if case.missed:
        return np.zeros(case.n_joints, dtype=bool)
    return case.errors_mm < threshold_mm


def pck3d(cases: Sequence[PoseEvalCase], n_joints: int,
          threshold_mm: float = PCK_THRESHOLD_MM) -> Pck3DResult:
    """Percentage of joints under `threshold_mm`; every joint of a missed person is wrong"""
    cases = list(cases)
    if not cases:
        return Pck3DResult(0.0, [0.0] * n_joints, [(label, None) for _, _, label in DISTANCE_BINS], threshold_mm)

    correct = np.stack([_correct_joints(c, threshold_mm) for c in cases])
    depths = np.array([c.root_depth_m for c in cases])

    per_bin = []
    for lo, hi, label in DISTANCE_BINS:
        in_bin = (depths >= lo) & (depths < hi)
        per_bin.append((label, float(correct[in_bin].mean() * 100.0) if in_bin.any() else None))

    return Pck3DResult(
        overall=float(correct.mean() * 100.0),
        per_joint=(correct.mean(axis=0) * 100.0).tolist(),
        per_distance_bin=per_bin,
        threshold_mm=threshold_mm,
    )


def group_pck(per_joint: Sequence[float], joint_names: Sequence[str]) -> Dict[str, float]:
    """Average per-joint 3DPCK over the body-part groups present in `joint_names`"""
    index = {name: k for k, name in enumerate(joint_names)}
    groups = {}
    for group, names in JOINT_GROUPS.items():
        members = [per_joint[index[n]] for n in names if n in index]
        if members:
            groups[group] = float(np.mean(members))
    return groups


# ============================================================
# Report
# ============================================================

@dataclass
class EvalReport:
    ap: float
    ap_defined: bool
    mpjpe_mm: Optional[float]
    pck3d: float
    pck3d_per_joint: List[float]
    pck3d_per_distance_bin: List[Tuple[str, Optional[float]]]
    pck3d_per_group: Dict[str, float]
    joint_names: List[str]
    n_detections: int
    n_ground_truths: int
    n_misses: int
    iou_threshold: float = 0.5
    pck_threshold_mm: float = PCK_THRESHOLD_MM
    extra: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["pck3d_per_distance_bin"] = [list(item) for item in self.pck3d_per_distance_bin]
        return data


def group_by_image(dets: Iterable[Detection]) -> Dict[str, List[Detection]]:
    grouped: Dict[str, List[Detection]] = {}
    for d in dets:
        grouped.setdefault(d.image_id, []).append(d)
    return grouped


def pose_eval_cases(dets: Sequence[Detection], scene: SceneSample, skeleton: Skeleton) -> List[PoseEvalCase]:
    """Pair one image's detections with its people and measure joint errors"""
    gt_boxes = [p.box for p in scene.people]
    pairing = match_for_pose_eval([d.box for d in dets], gt_boxes)
    cases = [PoseEvalCase(None, p.depth, skeleton.n_joints) for p in scene.people]
    for d, g in pairing.pairs:
        person = scene.people[g]
        pred = rescale_prediction(dets[d].pose3d, person.pose3d, skeleton.edges, skeleton.root_index)
        cases[g] = PoseEvalCase(joint_errors_mm(pred, person.pose3d), person.depth, skeleton.n_joints)
    return cases


def evaluate_detections(dets: Iterable[Detection], scenes: Sequence[SceneSample],
                        skeleton: Optional[Skeleton] = None,
                        iou_threshold: float = 0.5,
                        pck_threshold_mm: float = PCK_THRESHOLD_MM) -> EvalReport:
    """AP over all images plus MPJPE and 3DPCK over paired people"""
    skeleton = skeleton or default_skeleton()
    by_image = group_by_image(dets)
    n_dets = sum(len(v) for v in by_image.values())
    unknown = set(by_image) - {s.image_id for s in scenes}
    if unknown:
        logger.warning(f"{len(unknown)} detection image ids have no ground truth; counted as false positives")

    gts = {s.image_id: s.boxes() for s in scenes}
    pr = precision_recall(by_image, gts, iou_threshold)

    cases: List[PoseEvalCase] = []
    for scene in scenes:
        cases.extend(pose_eval_cases(by_image.get(scene.image_id, []), scene, skeleton))

    pck = pck3d(cases, skeleton.n_joints, pck_threshold_mm)
    return EvalReport(
        ap=pr.ap,
        ap_defined=pr.defined,
        mpjpe_mm=mpjpe(cases),
        pck3d=pck.overall,
        pck3d_per_joint=pck.per_joint,
        pck3d_per_distance_bin=pck.per_distance_bin,
        pck3d_per_group=group_pck(pck.per_joint, skeleton.joint_names),
        joint_names=list(skeleton.joint_names),
        n_detections=n_dets,
        n_ground_truths=len(cases),
        n_misses=sum(c.missed for c in cases),
        iou_threshold=iou_threshold,
        pck_threshold_mm=pck_threshold_mm,
    )
