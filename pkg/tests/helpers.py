"""Finite differences and small random instances shared by the test modules"""

import numpy as np

from src.core.anchors import AnchorGrid, AnchorSet, GroundTruthScene, match
from src.core.geometry import encode_boxes, to_anchor_space
from src.core.losses import LossWeights, PredictionTensors, normalize_pose3d

CHAIN_EDGES = ((0, 1), (1, 2))


def central_difference(f, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """d f / d x by central differences; only `indices` are filled when given"""
    grad = np.zeros_like(x)
    for idx in (np.ndindex(x.shape) if indices is None else indices):
        saved = x[idx]
        x[idx] = saved + h
        up = f()
        x[idx] = saved - h
        down = f()
        x[idx] = saved
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def assert_gradients_match(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-7):
    """Relative error below rtol, except where both sides are at round-off level"""
    close = (relative_error(analytic, numeric) < rtol) | (np.abs(np.asarray(analytic) - np.asarray(numeric)) < atol)
    assert close.all(), f"max rel err {relative_error(analytic, numeric)[~close].max():.3e}"


def random_scene(rng: np.random.Generator, n_people: int, n_joints: int = 3, size: float = 32.0,
                 edges=CHAIN_EDGES) -> GroundTruthScene:
    boxes, poses2d, poses3d, vis, targets = [], [], [], [], []
    for _ in range(n_people):
        w, h = rng.uniform(0.25 * size, 0.7 * size, size=2)
        x0 = rng.uniform(0, size - w)
        y0 = rng.uniform(0, size - h)
        boxes.append([x0, y0, x0 + w, y0 + h])
        poses2d.append(np.stack([rng.uniform(x0, x0 + w, n_joints), rng.uniform(y0, y0 + h, n_joints)], axis=1))
        p3 = rng.normal(size=(n_joints, 3)) + np.array([0.0, 0.0, 5.0])
        poses3d.append(p3)
        v = rng.random(n_joints) < 0.8
        v[0] = True
        vis.append(v)
        targets.append(normalize_pose3d(p3, edges, 0))
    if n_people == 0:
        return GroundTruthScene.empty(n_joints)
    return GroundTruthScene(
        boxes=np.array(boxes),
        poses2d=np.array(poses2d),
        poses3d=np.array(poses3d),
        visibility=np.array(vis),
        targets3d=np.array(targets),
    )


def small_grid(n_anchors: int = 2, cells: int = 4, stride: float = 8.0) -> AnchorGrid:
    priors = [(10.0, 14.0), (18.0, 24.0), (26.0, 12.0)][:n_anchors]
    return AnchorGrid(cells, cells, stride, AnchorSet(tuple(priors)))


def near_target_predictions(rng: np.random.Generator, grid: AnchorGrid, scene: GroundTruthScene,
                            noise: float = 0.3) -> PredictionTensors:
    """Predictions scattered around the matched targets so every term is active"""
    m = match(grid, scene)
    k = scene.n_joints
    pred = PredictionTensors.zeros(grid, k)
    pred.cls_logits[...] = rng.normal(size=pred.cls_logits.shape)
    anchors = grid.centers
    boxes = np.where(m.matched[..., None], m.matched_boxes, grid.corners)
    pred.box_offsets[...] = encode_boxes(anchors, boxes) + noise * rng.normal(size=pred.box_offsets.shape)
    pred.pose2d[...] = to_anchor_space(m.matched_poses2d, anchors[..., None, :]) + noise * rng.normal(size=pred.pose2d.shape)
    pred.pose3d[...] = m.matched_targets3d + noise * rng.normal(size=pred.pose3d.shape)
    return pred


def random_weights(rng: np.random.Generator, n_anchors: int, n_joints: int, scale: float = 0.3) -> LossWeights:
    w = LossWeights.zeros(n_anchors, n_joints)
    for value in w.arrays().values():
        value[...] = scale * rng.normal(size=value.shape)
    return w
