"""
Predictors map a scene to dense PredictionTensors.

DirectPredictor keeps one free parameter per output element per training
scene, so its Jacobian is the identity and training it exercises the losses
alone. LinearPredictor maps per-anchor geometric features of the scene
through weights shared across cells, one weight set per prior.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict

import numpy as np

from src.core.anchors import AnchorGrid, GroundTruthScene
from src.core.geometry import box_iou, encode_boxes
from src.core.losses import PREDICTION_FIELDS, PredictionTensors

logger = logging.getLogger(__name__)

N_FEATURES = 6


class Predictor(ABC):
    """Trainable producer of PredictionTensors for one scene at a time"""

    kind = "abstract"

    def __init__(self, grid: AnchorGrid, n_joints: int, cls_bias: float = 0.0):
        self.grid = grid
        self.n_joints = n_joints
        self.cls_bias = float(cls_bias)
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    @abstractmethod
    def forward(self, scene: GroundTruthScene) -> PredictionTensors:
        pass

    @abstractmethod
    def backward(self, scene: GroundTruthScene, grad: PredictionTensors):
        """Accumulate parameter gradients given d loss / d outputs"""
        pass

    def register(self, scene: GroundTruthScene):
        """Prepare any per-scene state before training"""

    def zero_grad(self):
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.params

    def state_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "cls_bias": self.cls_bias,
            "params": {name: p.tolist() for name, p in self.params.items()},
        }

    def load_state_dict(self, data: Dict[str, Any]):
        if data["kind"] != self.kind:
            raise ValueError(f"Checkpoint holds a {data['kind']} predictor, expected {self.kind}")
        self.cls_bias = float(data["cls_bias"])
        self.params = {name: np.array(p, dtype=np.float64) for name, p in data["params"].items()}
        self.zero_grad()


class DirectPredictor(Predictor):
    """Overfit table: every output element of every training scene is a parameter"""

    kind = "direct"

    def _key(self, image_id: str, name: str) -> str:
        return f"{image_id}/{name}"

    def register(self, scene: GroundTruthScene):
        if self._key(scene.image_id, "cls_logits") in self.params:
            return
        fresh = PredictionTensors.zeros(self.grid, self.n_joints, self.cls_bias)
        for name, value in fresh.arrays().items():
            key = self._key(scene.image_id, name)
            self.params[key] = value
            self.grads[key] = np.zeros_like(value)

    def forward(self, scene: GroundTruthScene) -> PredictionTensors:
        if self._key(scene.image_id, "cls_logits") not in self.params:
            # unseen scene: the untrained prior
            return PredictionTensors.zeros(self.grid, self.n_joints, self.cls_bias)
        return PredictionTensors.from_arrays(
            {name: self.params[self._key(scene.image_id, name)] for name in PREDICTION_FIELDS}
        )

    def backward(self, scene: GroundTruthScene, grad: PredictionTensors):
        for name, value in grad.arrays().items():
            self.grads[self._key(scene.image_id, name)] += value


def anchor_features(grid: AnchorGrid, scene: GroundTruthScene) -> np.ndarray:
    """
    (H, W, N_A, 6) features: bias, IoU with the best-overlapping person and
    the offsets (tx, ty, tw, th) that would decode the anchor onto that
    person's box. Anchors overlapping nobody get zeros after the bias.
    """
    features = np.zeros(grid.shape + (N_FEATURES,))
    features[..., 0] = 1.0
    if scene.n_people == 0:
        return features
    corners = grid.corners.reshape(-1, 4)
    overlaps = box_iou(corners, scene.boxes)
    best = np.argmax(overlaps, axis=1)
    best_iou = overlaps[np.arange(len(best)), best]
    offsets = encode_boxes(grid.centers.reshape(-1, 4), scene.boxes[best])
    offsets[best_iou <= 0] = 0.0

    flat = features.reshape(-1, N_FEATURES)
    flat[:, 1] = best_iou
    flat[:, 2:] = offsets
    return features


class LinearPredictor(Predictor):
    """Per-prior linear map from anchor features to every output"""

    kind = "linear"

    def __init__(self, grid: AnchorGrid, n_joints: int, cls_bias: float = 0.0):
        super().__init__(grid, n_joints, cls_bias)
        a, k, f = grid.n_anchors, n_joints, N_FEATURES
        w_cls = np.zeros((a, f))
        w_cls[:, 0] = self.cls_bias
        self.params = {
            "w_cls": w_cls,
            "w_box": np.zeros((a, f, 4)),
            "w_pose2d": np.zeros((a, f, k, 2)),
            "w_pose3d": np.zeros((a, f, k, 3)),
        }
        self.zero_grad()
        self._features: Dict[str, np.ndarray] = {}

    def features(self, scene: GroundTruthScene) -> np.ndarray:
        cached = self._features.get(scene.image_id)
        if cached is None:
            cached = self._features[scene.image_id] = anchor_features(self.grid, scene)
        return cached

    def forward(self, scene: GroundTruthScene) -> PredictionTensors:
        phi = self.features(scene)
        return PredictionTensors(
            cls_logits=np.einsum("hwaf,af->hwa", phi, self.params["w_cls"]),
            box_offsets=np.einsum("hwaf,afc->hwac", phi, self.params["w_box"]),
            pose2d=np.einsum("hwaf,afkc->hwakc", phi, self.params["w_pose2d"]),
            pose3d=np.einsum("hwaf,afkc->hwakc", phi, self.params["w_pose3d"]),
        )

    def backward(self, scene: GroundTruthScene, grad: PredictionTensors):
        phi = self.features(scene)
        self.grads["w_cls"] += np.einsum("hwaf,hwa->af", phi, grad.cls_logits)
        self.grads["w_box"] += np.einsum("hwaf,hwac->afc", phi, grad.box_offsets)
        self.grads["w_pose2d"] += np.einsum("hwaf,hwakc->afkc", phi, grad.pose2d)
        self.grads["w_pose3d"] += np.einsum("hwaf,hwakc->afkc", phi, grad.pose3d)


PREDICTORS = {
    DirectPredictor.kind: DirectPredictor,
    LinearPredictor.kind: LinearPredictor,
}


def make_predictor(kind: str, grid: AnchorGrid, n_joints: int, cls_bias: float = 0.0) -> Predictor:
    try:
        cls = PREDICTORS[kind]
    except KeyError:
        raise ValueError(f"Unknown predictor '{kind}', expected one of {sorted(PREDICTORS)}")
    return cls(grid, n_joints, cls_bias)
