"""
Synthetic multi-person scenes: an articulated skeleton, a pinhole camera,
inter-person occlusion and log-uniform depth sampling.

Scenes carry geometry only (no pixels); the predictors consume the ground
truth directly.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.anchors import GroundTruthScene
from src.core.geometry import Box2D
from src.core.losses import bone_length_sum, normalize_pose3d

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BOX_MARGIN = 0.05
CAMERA_HEIGHT_M = 1.5
MIN_DEPTH_M = 1.5
DROPOUT_FACTOR = 0.1


# ============================================================
# Skeleton
# ============================================================

@dataclass(frozen=True)
class Skeleton:
    """
    Kinematic tree of N_K joints rooted at `root_index`.

    `rest_pose` (metres, camera axes: x right, y down, z forward) and
    `angle_limits` (radians, per joint, about x/y/z) are only needed for
    pose sampling.
    """
    joint_names: Tuple[str, ...]
    edges: Tuple[Tuple[int, int], ...]
    root_index: int = 0
    rest_pose: Optional[Tuple[Tuple[float, float, float], ...]] = None
    angle_limits: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def __post_init__(self):
        n = len(self.joint_names)
        if not 0 <= self.root_index < n:
            raise ValueError(f"root_index {self.root_index} outside {n} joints")
        if len(self.edges) != n - 1:
            raise ValueError(f"A tree over {n} joints needs {n - 1} edges, got {len(self.edges)}")
        children = [c for _, c in self.edges]
        if self.root_index in children:
            raise ValueError("The root joint cannot have a parent")
        if len(set(children)) != len(children):
            raise ValueError("Every joint must have at most one parent")
        if len(self.topological_edges()) != n - 1:
            raise ValueError("Skeleton edges do not form a tree reachable from the root")
        for name, values in (("rest_pose", self.rest_pose), ("angle_limits", self.angle_limits)):
            if values is not None and len(values) != n:
                raise ValueError(f"{name} must have one entry per joint")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def topological_edges(self) -> List[Tuple[int, int]]:
        """Edges ordered so every parent is placed before its children"""
        ordered = []
        frontier = [self.root_index]
        while frontier:
            parent = frontier.pop(0)
            for p, c in self.edges:
                if p == parent:
                    ordered.append((p, c))
                    frontier.append(c)
        return ordered

    def rest_array(self) -> np.ndarray:
        if self.rest_pose is None:
            raise ValueError("Skeleton has no rest pose")
        return np.array(self.rest_pose, dtype=np.float64)

    @property
    def rest_bone_sum(self) -> float:
        return bone_length_sum(self.rest_array(), self.edges)


JOINT_NAMES = (
    "pelvis", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

JOINT_EDGES = (
    (0, 1), (1, 2),
    (1, 3), (3, 4), (4, 5),
    (1, 6), (6, 7), (7, 8),
    (0, 9), (9, 10), (10, 11),
    (0, 12), (12, 13), (13, 14),
)

REST_POSE = (
    (0.0, 0.0, 0.0),
    (0.0, -0.50, 0.0), (0.0, -0.72, 0.0),
    (0.18, -0.48, 0.0), (0.18, -0.20, 0.0), (0.18, 0.05, 0.0),
    (-0.18, -0.48, 0.0), (-0.18, -0.20, 0.0), (-0.18, 0.05, 0.0),
    (0.10, 0.0, 0.0), (0.10, 0.45, 0.0), (0.10, 0.88, 0.0),
    (-0.10, 0.0, 0.0), (-0.10, 0.45, 0.0), (-0.10, 0.88, 0.0),
)

# Limits on the rotation of the bone ending at each joint
ANGLE_LIMITS = (
    (0.15, 0.0, 0.15),
    (0.2, 0.3, 0.2), (0.3, 0.4, 0.2),
    (0.2, 0.2, 0.3), (0.8, 0.4, 0.8), (0.8, 0.3, 0.8),
    (0.2, 0.2, 0.3), (0.8, 0.4, 0.8), (0.8, 0.3, 0.8),
    (0.15, 0.1, 0.1), (0.6, 0.2, 0.2), (0.6, 0.0, 0.1),
    (0.15, 0.1, 0.1), (0.6, 0.2, 0.2), (0.6, 0.0, 0.1),
)


def default_skeleton() -> Skeleton:
    """15-joint pelvis-rooted skeleton"""
    return Skeleton(
        joint_names=JOINT_NAMES,
        edges=JOINT_EDGES,
        root_index=0,
        rest_pose=REST_POSE,
        angle_limits=ANGLE_LIMITS,
    )


# ============================================================
# Camera
# ============================================================

@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics and image size in pixels"""
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 192.0
    width: int = 640
    height: int = 384

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")

    def project(self, points) -> np.ndarray:
        """Project camera-frame points (..., 3) to pixels (..., 2)"""
        points = np.asarray(points, dtype=np.float64)
        z = points[..., 2]
        return np.stack([
            self.fx * points[..., 0] / z + self.cx,
            self.fy * points[..., 1] / z + self.cy,
        ], axis=-1)

    def in_frame(self, pixels) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=np.float64)
        return (
            (pixels[..., 0] >= 0) & (pixels[..., 0] < self.width)
            & (pixels[..., 1] >= 0) & (pixels[..., 1] < self.height)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Camera":
        return cls(
            fx=float(data["fx"]), fy=float(data["fy"]),
            cx=float(data["cx"]), cy=float(data["cy"]),
            width=int(data["width"]), height=int(data["height"]),
        )


# ============================================================
# Samples
# ============================================================

@dataclass(frozen=True, eq=False)
class PersonSample:
    pose3d: np.ndarray       # (N_K, 3) metres, camera frame
    pose2d: np.ndarray       # (N_K, 2) pixels
    box: Box2D
    visibility: np.ndarray   # (N_K,) bool
    depth: float             # root depth in metres

    @property
    def n_visible(self) -> int:
        return int(self.visibility.sum())

    def to_record(self) -> Dict[str, Any]:
        return {
            "pose3d": self.pose3d.tolist(),
            "pose2d": self.pose2d.tolist(),
            "box": self.box.as_array().tolist(),
            "visibility": [bool(v) for v in self.visibility],
            "depth": float(self.depth),
        }

    @classmethod
    def from_record(cls, data: Dict[str, Any]) -> "PersonSample":
        return cls(
            pose3d=np.array(data["pose3d"], dtype=np.float64).reshape(-1, 3),
            pose2d=np.array(data["pose2d"], dtype=np.float64).reshape(-1, 2),
            box=Box2D.from_array(data["box"]),
            visibility=np.array(data["visibility"], dtype=bool),
            depth=float(data["depth"]),
        )


@dataclass(frozen=True, eq=False)
class SceneSample:
    """Ground truth of one synthetic image"""
    image_id: str
    camera: Camera
    people: Tuple[PersonSample, ...] = field(default_factory=tuple)

    @property
    def n_people(self) -> int:
        return len(self.people)

    def boxes(self) -> List[Box2D]:
        return [p.box for p in self.people]

    def to_record(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "image_id": self.image_id,
            "camera": self.camera.to_dict(),
            "people": [p.to_record() for p in self.people],
        }

    @classmethod
    def from_record(cls, data: Dict[str, Any]) -> "SceneSample":
        return cls(
            image_id=str(data["image_id"]),
            camera=Camera.from_dict(data["camera"]),
            people=tuple(PersonSample.from_record(p) for p in data["people"]),
        )


def tight_box(pose2d: np.ndarray, visibility: np.ndarray, margin: float = BOX_MARGIN) -> Optional[Box2D]:
    """Bounding box of the visible joints grown by `margin` of its size per side"""
    pts = pose2d[visibility]
    if len(pts) == 0:
        return None
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = (hi - lo) * margin
    return Box2D(lo[0] - pad[0], lo[1] - pad[1], hi[0] + pad[0], hi[1] + pad[1])


# ============================================================
# Generation
# ============================================================

def sample_pose(rng: np.random.Generator, skeleton: Skeleton, yaw: float) -> np.ndarray:
    """Root-centred articulated pose within the skeleton's joint-angle limits"""
    rest = skeleton.rest_array()
    if skeleton.angle_limits is None:
        raise ValueError("Skeleton has no joint-angle limits")
    limits = np.array(skeleton.angle_limits, dtype=np.float64)
    angles = rng.uniform(-1.0, 1.0, size=limits.shape) * limits
    local = Rotation.from_euler("xyz", angles)

    root = skeleton.root_index
    rotations = [None] * skeleton.n_joints
    rotations[root] = Rotation.from_euler("y", yaw) * local[root]
    pose = np.zeros_like(rest)
    for parent, child in skeleton.topological_edges():
        rotations[child] = rotations[parent] * local[child]
        pose[child] = pose[parent] + rotations[child].apply(rest[child] - rest[parent])
    return pose


def _check_ranges(n_people_range, depth_range_m, occlusion_rate):
    lo, hi = n_people_range
    if lo < 0 or hi < lo:
        raise ValueError(f"Invalid people range {n_people_range}")
    dmin, dmax = depth_range_m
    if dmin < MIN_DEPTH_M or dmax < dmin:
        raise ValueError(f"Depth range must satisfy {MIN_DEPTH_M} <= min <= max, got {depth_range_m}")
    if not 0.0 <= occlusion_rate < 1.0:
        raise ValueError(f"occlusion_rate must be in [0, 1), got {occlusion_rate}")


def generate_scene(seed: Union[int, Sequence[int]],
                   n_people_range: Tuple[int, int] = (1, 5),
                   depth_range_m: Tuple[float, float] = (2.0, 20.0),
                   skeleton: Optional[Skeleton] = None,
                   camera: Optional[Camera] = None,
                   occlusion_rate: float = 0.1,
                   image_id: Optional[str] = None) -> SceneSample:
    """
    Sample one scene.

    Depth is log-uniform in `depth_range_m`, people stand on a ground plane
    CAMERA_HEIGHT_M below the camera and are spread horizontally over the
    central 80% of the frame. Joints of a farther person inside a nearer
    person's box are hidden with probability `occlusion_rate`; every joint is
    also dropped with probability `occlusion_rate * 0.1`. Joints outside the
    frame are invisible. People left with fewer than two visible joints are
    discarded.
    """
    _check_ranges(n_people_range, depth_range_m, occlusion_rate)
    skeleton = skeleton or default_skeleton()
    camera = camera or Camera()
    rng = np.random.default_rng(seed)

    n = int(rng.integers(n_people_range[0], n_people_range[1] + 1))
    k = skeleton.n_joints
    rest = skeleton.rest_array()
    root_height = float(rest[:, 1].max() - rest[skeleton.root_index, 1])

    log_depth = rng.uniform(math.log(depth_range_m[0]), math.log(depth_range_m[1]), size=n)
    columns = rng.uniform(0.1 * camera.width, 0.9 * camera.width, size=n)
    yaws = rng.uniform(-math.pi, math.pi, size=n)
    occlusion_draws = rng.random((n, k))
    dropout_draws = rng.random((n, k))

    poses3d = []
    for idx in range(n):
        depth = math.exp(log_depth[idx])
        root = np.array([
            (columns[idx] - camera.cx) * depth / camera.fx,
            CAMERA_HEIGHT_M - root_height,
            depth,
        ])
        poses3d.append(sample_pose(rng, skeleton, yaws[idx]) + root)

    poses2d = [camera.project(p) for p in poses3d]
    in_frame = [camera.in_frame(p) for p in poses2d]
    visibility = [f & (dropout_draws[idx] >= occlusion_rate * DROPOUT_FACTOR) for idx, f in enumerate(in_frame)]

    order = np.argsort(log_depth, kind="stable")
    for rank, far in enumerate(order):
        for near in order[:rank]:
            occluder = tight_box(poses2d[near], in_frame[near], margin=0.0)
            if occluder is None:
                continue
            x, y = poses2d[far][:, 0], poses2d[far][:, 1]
            inside = (x >= occluder.xmin) & (x <= occluder.xmax) & (y >= occluder.ymin) & (y <= occluder.ymax)
            visibility[far] &= ~(inside & (occlusion_draws[far] < occlusion_rate))

    people = []
    for idx in range(n):
        vis = visibility[idx]
        box = tight_box(poses2d[idx], vis)
        if vis.sum() < 2 or box is None or box.width <= 0 or box.height <= 0:
            logger.debug(f"Dropping person {idx}: {int(vis.sum())} visible joints")
            continue
        people.append(PersonSample(
            pose3d=poses3d[idx],
            pose2d=poses2d[idx],
            box=box,
            visibility=vis,
            depth=float(poses3d[idx][skeleton.root_index, 2]),
        ))

    if image_id is None:
        image_id = f"scene_{seed}" if isinstance(seed, (int, np.integer)) else "scene_" + "_".join(str(s) for s in seed)
    return SceneSample(image_id=image_id, camera=camera, people=tuple(people))


def generate_dataset(seed: int, n_images: int, **kwargs) -> List[SceneSample]:
    """Scene `i` is generated from the child seed [seed, i]"""
    if n_images < 0:
        raise ValueError(f"n_images must be non-negative, got {n_images}")
    return [
        generate_scene([seed, index], image_id=f"img_{index:05d}", **kwargs)
        for index in range(n_images)
    ]


# ============================================================
# Augmentation
# ============================================================

CropSpec = Union[None, Tuple[int, int], Box2D]


def augment(sample: SceneSample, seed: Union[int, Sequence[int]],
            scale_range: Tuple[float, float] = (1.0, 1.0),
            crop: CropSpec = None) -> SceneSample:
    """
    Random scale followed by an optional crop.

    `crop` is either a (width, height) window placed at a random offset in
    the scaled image or an explicit Box2D window in scaled coordinates. 2D
    poses, boxes and intrinsics are transformed jointly; 3D poses are left
    untouched. Joints leaving the frame become invisible. People with fewer
    than two visible joints are removed, not only fully hidden ones: a single
    joint spans a zero-area box.
    """
    lo, hi = scale_range
    if not (lo > 0 and hi >= lo):
        raise ValueError(f"Invalid scale range {scale_range}")
    rng = np.random.default_rng(seed)
    s = float(rng.uniform(lo, hi))
    cam = sample.camera

    scaled_w, scaled_h = cam.width * s, cam.height * s
    if crop is None:
        x0 = y0 = 0.0
        width, height = int(round(scaled_w)), int(round(scaled_h))
    elif isinstance(crop, Box2D):
        x0, y0 = crop.xmin, crop.ymin
        width, height = int(round(crop.width)), int(round(crop.height))
    else:
        width, height = int(crop[0]), int(crop[1])
        x0 = float(rng.uniform(0.0, max(0.0, scaled_w - width)))
        y0 = float(rng.uniform(0.0, max(0.0, scaled_h - height)))

    camera = Camera(
        fx=cam.fx * s, fy=cam.fy * s,
        cx=cam.cx * s - x0, cy=cam.cy * s - y0,
        width=width, height=height,
    )

    people = []
    for person in sample.people:
        pose2d = person.pose2d * s - np.array([x0, y0])
        vis = person.visibility & camera.in_frame(pose2d)
        if vis.sum() < 2:
            continue
        if np.array_equal(vis, person.visibility):
            b = person.box
            box = Box2D(b.xmin * s - x0, b.ymin * s - y0, b.xmax * s - x0, b.ymax * s - y0)
        else:
            box = tight_box(pose2d, vis)
        people.append(replace(person, pose2d=pose2d, box=box, visibility=vis))

    return SceneSample(image_id=sample.image_id, camera=camera, people=tuple(people))


def ground_truth_from_sample(sample: SceneSample, skeleton: Optional[Skeleton] = None) -> GroundTruthScene:
    """Arrays consumed by matching, with bone-sum normalised 3D targets"""
    skeleton = skeleton or default_skeleton()
    if not sample.people:
        return GroundTruthScene.empty(skeleton.n_joints, image_id=sample.image_id)
    return GroundTruthScene(
        boxes=np.stack([p.box.as_array() for p in sample.people]),
        poses2d=np.stack([p.pose2d for p in sample.people]),
        poses3d=np.stack([p.pose3d for p in sample.people]),
        visibility=np.stack([p.visibility for p in sample.people]),
        targets3d=np.stack([normalize_pose3d(p.pose3d, skeleton.edges, skeleton.root_index) for p in sample.people]),
        image_id=sample.image_id,
    )
