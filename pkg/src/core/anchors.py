"""
Anchor priors, the anchor grid and ground-truth matching.

Every anchor is matched to the ground-truth box it overlaps most (ties go to
the lowest ground-truth index). Its PONO value is that IoU divided by the
best IoU any anchor matched to the same person reaches; anchors with
PONO > 0.5 form the positive set.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.geometry import AnchorBox, Box2D, as_box_array, box_iou

logger = logging.getLogger(__name__)

POSITIVE_PONO = 0.5


@dataclass(frozen=True)
class AnchorSet:
    """N_A prior sizes (width, height), sorted by area, equal areas by ascending width"""
    priors: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        priors = tuple((float(w), float(h)) for w, h in self.priors)
        if not priors:
            raise ValueError("An anchor set needs at least one prior")
        for w, h in priors:
            if not (math.isfinite(w) and math.isfinite(h) and w > 0 and h > 0):
                raise ValueError(f"Prior sizes must be positive, got ({w}, {h})")
        object.__setattr__(self, "priors", tuple(sorted(priors, key=lambda p: (p[0] * p[1], p[0]))))

    @property
    def n_anchors(self) -> int:
        return len(self.priors)

    def as_array(self) -> np.ndarray:
        return np.array(self.priors, dtype=np.float64)

    def scaled(self, factor: float) -> "AnchorSet":
        return AnchorSet(tuple((w * factor, h * factor) for w, h in self.priors))

    def to_dict(self) -> Dict[str, Any]:
        return {"priors": [[w, h] for w, h in self.priors]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnchorSet":
        return cls(tuple((w, h) for w, h in data["priors"]))


@dataclass(frozen=True)
class AnchorGrid:
    """H x W output cells, each carrying every prior of `priors`"""
    height: int
    width: int
    stride: float
    priors: AnchorSet

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"Grid must have at least one cell, got {self.height}x{self.width}")
        if self.stride < 1:
            raise ValueError(f"Stride must be >= 1, got {self.stride}")

    @classmethod
    def for_image(cls, image_width: int, image_height: int, stride: float, priors: AnchorSet) -> "AnchorGrid":
        return cls(
            height=max(1, math.ceil(image_height / stride)),
            width=max(1, math.ceil(image_width / stride)),
            stride=stride,
            priors=priors,
        )

    @property
    def n_anchors(self) -> int:
        return self.priors.n_anchors

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.n_anchors)

    @property
    def size(self) -> int:
        return self.height * self.width * self.n_anchors

    @cached_property
    def centers(self) -> np.ndarray:
        """(H, W, N_A, 4) centre-form anchors"""
        ys = (np.arange(self.height, dtype=np.float64) + 0.5) * self.stride
        xs = (np.arange(self.width, dtype=np.float64) + 0.5) * self.stride
        sizes = self.priors.as_array()
        out = np.empty(self.shape + (4,), dtype=np.float64)
        out[..., 0] = xs[None, :, None]
        out[..., 1] = ys[:, None, None]
        out[..., 2] = sizes[None, None, :, 0]
        out[..., 3] = sizes[None, None, :, 1]
        out.setflags(write=False)
        return out

    @cached_property
    def corners(self) -> np.ndarray:
        """(H, W, N_A, 4) corner-form anchors"""
        c = self.centers
        out = np.stack([
            c[..., 0] - c[..., 2] / 2.0,
            c[..., 1] - c[..., 3] / 2.0,
            c[..., 0] + c[..., 2] / 2.0,
            c[..., 1] + c[..., 3] / 2.0,
        ], axis=-1)
        out.setflags(write=False)
        return out

    def anchor_at(self, i: int, j: int, a: int) -> AnchorBox:
        if not (0 <= i < self.height and 0 <= j < self.width and 0 <= a < self.n_anchors):
            raise IndexError(f"Anchor index ({i}, {j}, {a}) outside grid {self.shape}")
        w, h = self.priors.priors[a]
        return AnchorBox((j + 0.5) * self.stride, (i + 0.5) * self.stride, w, h)

    def scaled(self, factor: float) -> "AnchorGrid":
        return AnchorGrid(self.height, self.width, self.stride * factor, self.priors.scaled(factor))


def anchor_at(grid: AnchorGrid, i: int, j: int, a: int) -> AnchorBox:
    """Anchor box at cell (i, j) for prior a"""
    return grid.anchor_at(i, j, a)


@dataclass(frozen=True, eq=False)
class GroundTruthScene:
    """
    Ground truth for one image.

    Attributes:
        boxes: (N, 4) corner boxes in pixels
        poses2d: (N, N_K, 2) pixel joints
        poses3d: (N, N_K, 3) metric joints in the camera frame
        visibility: (N, N_K) joint visibility flags
        targets3d: (N, N_K, 3) root-relative poses with unit bone sum
    """
    boxes: np.ndarray
    poses2d: np.ndarray
    poses3d: np.ndarray
    visibility: np.ndarray
    targets3d: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        n = len(self.boxes)
        if not (len(self.poses2d) == len(self.poses3d) == len(self.visibility) == len(self.targets3d) == n):
            raise ValueError("boxes, poses and visibility must describe the same number of people")
        if n and (self.poses2d.shape[1] != self.poses3d.shape[1] or self.visibility.shape[1] != self.poses3d.shape[1]):
            raise ValueError("2D poses, 3D poses and visibility must share the joint count")

    @property
    def n_people(self) -> int:
        return len(self.boxes)

    @property
    def n_joints(self) -> int:
        return self.poses3d.shape[1]

    def box(self, n: int) -> Box2D:
        return Box2D.from_array(self.boxes[n])

    @classmethod
    def empty(cls, n_joints: int, image_id: str = "") -> "GroundTruthScene":
        return cls(
            boxes=np.zeros((0, 4)),
            poses2d=np.zeros((0, n_joints, 2)),
            poses3d=np.zeros((0, n_joints, 3)),
            visibility=np.zeros((0, n_joints), dtype=bool),
            targets3d=np.zeros((0, n_joints, 3)),
            image_id=image_id,
        )


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Matching of one anchor grid against one scene"""
    match_index: np.ndarray      # (H, W, N_A) int, -1 = unmatched
    anchor_iou: np.ndarray       # (H, W, N_A) IoU with the matched box, 0 when unmatched
    pono: np.ndarray             # (H, W, N_A) in [0, 1]
    positive_mask: np.ndarray    # (H, W, N_A) bool
    scene: GroundTruthScene
    unmatched_gt: Tuple[int, ...] = field(default=())

    @property
    def n_positive(self) -> int:
        return int(self.positive_mask.sum())

    @property
    def matched(self) -> np.ndarray:
        return self.match_index >= 0

    def _gather(self, values: np.ndarray, fill=0) -> np.ndarray:
        out_shape = self.match_index.shape + values.shape[1:]
        if values.shape[0] == 0:
            return np.full(out_shape, fill, dtype=values.dtype)
        out = values[np.where(self.matched, self.match_index, 0)]
        out[~self.matched] = fill
        return out

    @property
    def matched_boxes(self) -> np.ndarray:
        return self._gather(self.scene.boxes)

    @property
    def matched_poses2d(self) -> np.ndarray:
        return self._gather(self.scene.poses2d)

    @property
    def matched_poses3d(self) -> np.ndarray:
        return self._gather(self.scene.poses3d)

    @property
    def matched_targets3d(self) -> np.ndarray:
        return self._gather(self.scene.targets3d)

    @property
    def matched_visibility(self) -> np.ndarray:
        return self._gather(self.scene.visibility, fill=False)


def match(grid: AnchorGrid, scene: GroundTruthScene) -> MatchResult:
    """Match every anchor to its best ground truth and compute the PONO map"""
    shape = grid.shape
    n = scene.n_people
    if n == 0:
        return MatchResult(
            match_index=np.full(shape, -1, dtype=np.int64),
            anchor_iou=np.zeros(shape),
            pono=np.zeros(shape),
            positive_mask=np.zeros(shape, dtype=bool),
            scene=scene,
        )

    ious = box_iou(grid.corners.reshape(-1, 4), scene.boxes)
    best = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(ious.shape[0]), best]
    matched = best_iou > 0
    match_index = np.where(matched, best, -1)

    per_gt_max = np.zeros(n)
    np.maximum.at(per_gt_max, best[matched], best_iou[matched])

    pono = np.zeros_like(best_iou)
    pono[matched] = best_iou[matched] / per_gt_max[best[matched]]

    unmatched_gt = tuple(int(k) for k in np.flatnonzero(per_gt_max == 0))
    if unmatched_gt:
        logger.warning(f"{len(unmatched_gt)} ground truth(s) of {scene.image_id or 'scene'} matched no anchor: {unmatched_gt}")

    return MatchResult(
        match_index=match_index.reshape(shape),
        anchor_iou=np.where(matched, best_iou, 0.0).reshape(shape),
        pono=pono.reshape(shape),
        positive_mask=(pono > POSITIVE_PONO).reshape(shape),
        scene=scene,
        unmatched_gt=unmatched_gt,
    )


def ambiguous_anchors(grid: AnchorGrid, scene: GroundTruthScene, margin: float = 0.1) -> np.ndarray:
    """Anchors overlapping two people whose IoUs differ by at most `margin`"""
    if scene.n_people < 2:
        return np.zeros(grid.shape, dtype=bool)
    ious = np.sort(box_iou(grid.corners.reshape(-1, 4), scene.boxes), axis=1)
    first, second = ious[:, -1], ious[:, -2]
    return ((second > 0) & (first - second <= margin)).reshape(grid.shape)


# ============================================================
# Prior clustering
# ============================================================

@dataclass
class AnchorClustering:
    """Outcome of k-means on box sizes"""
    centroids: np.ndarray
    assignments: np.ndarray
    history: List[float]
    iterations: int

    @property
    def anchor_set(self) -> AnchorSet:
        return AnchorSet(tuple((float(w), float(h)) for w, h in self.centroids))


def box_sizes(boxes) -> np.ndarray:
    """(M, 2) widths and heights of Box2D objects or corner arrays"""
    arr = as_box_array(boxes)
    return np.stack([arr[:, 2] - arr[:, 0], arr[:, 3] - arr[:, 1]], axis=1)


def size_iou(wh: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU (M, K) of origin-centred boxes given by their sizes"""
    inter = np.minimum(wh[:, None, 0], centroids[None, :, 0]) * np.minimum(wh[:, None, 1], centroids[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def mean_best_iou(boxes, priors: AnchorSet) -> float:
    """Mean over boxes of the best IoU any prior reaches"""
    wh = box_sizes(boxes)
    if len(wh) == 0:
        return 0.0
    return float(size_iou(wh, priors.as_array()).max(axis=1).mean())


def _seed_centroids(wh: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with the 1 - IoU distance"""
    centroids = [wh[rng.integers(len(wh))]]
    while len(centroids) < k:
        distance = 1.0 - size_iou(wh, np.array(centroids)).max(axis=1)
        weights = distance ** 2
        centroids.append(wh[rng.choice(len(wh), p=weights / weights.sum())])
    return np.array(centroids, dtype=np.float64)


def run_kmeans(boxes, n_anchors: int, max_iters: int = 300, seed: int = 0,
               init: Optional[np.ndarray] = None) -> AnchorClustering:
    """
    Lloyd iterations on (w, h) with 1 - IoU assignment and mean update.

    A mean update is not guaranteed to raise the mean best IoU; an update
    that lowers it is discarded and the iteration stops, so `history` never
    decreases.

    Args:
        boxes: Box2D objects or (M, 4) corner array
        n_anchors: number of priors to produce
        max_iters: iteration cap
        seed: seed for the k-means++ initialisation
        init: explicit (n_anchors, 2) initial centroids, bypassing seeding
    """
    wh = box_sizes(boxes)
    if len(wh) == 0:
        raise ValueError("Cannot cluster an empty box list")
    degenerate = (wh[:, 0] <= 0) | (wh[:, 1] <= 0)
    if degenerate.any():
        logger.warning(f"Ignoring {int(degenerate.sum())} zero-size boxes")
        wh = wh[~degenerate]
        if len(wh) == 0:
            raise ValueError("Cannot cluster: every box has zero size")
    n_distinct = len(np.unique(wh, axis=0))
    if n_anchors < 1 or n_anchors > n_distinct:
        raise ValueError(f"n_anchors={n_anchors} must be between 1 and the number of distinct sizes ({n_distinct})")

    rng = np.random.default_rng(seed)
    if init is not None:
        centroids = np.array(init, dtype=np.float64).reshape(n_anchors, 2)
    else:
        centroids = _seed_centroids(wh, n_anchors, rng)

    history = [float(size_iou(wh, centroids).max(axis=1).mean())]
    assignments = np.full(len(wh), -1)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new_assignments = np.argmax(size_iou(wh, centroids), axis=1)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        candidate = centroids.copy()
        for k in range(n_anchors):
            members = wh[assignments == k]
            if len(members):
                candidate[k] = members.mean(axis=0)
            else:
                # Re-seed with the box the current priors fit worst
                worst = int(np.argmin(size_iou(wh, candidate).max(axis=1)))
                logger.warning(f"Empty cluster {k}; re-seeding with box size {wh[worst].tolist()}")
                candidate[k] = wh[worst]
        score = float(size_iou(wh, candidate).max(axis=1).mean())
        if score < history[-1]:
            logger.debug(f"k-means update at iteration {iterations} lowers mean IoU to {score:.6f}; stopping")
            break
        centroids = candidate
        history.append(score)

    assignments = np.argmax(size_iou(wh, centroids), axis=1)
    return AnchorClustering(centroids=centroids, assignments=assignments, history=history, iterations=iterations)


def cluster_anchors(boxes, n_anchors: int, max_iters: int = 300, seed: int = 0) -> AnchorSet:
    """Cluster ground-truth box sizes into `n_anchors` priors"""
    result = run_kmeans(boxes, n_anchors, max_iters=max_iters, seed=seed)
    logger.info(f"k-means converged after {result.iterations} iterations, mean best IoU {result.history[-1]:.4f}")
    return result.anchor_set
