from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Optional, List, Dict, Any, Literal, Tuple

from src import config

SCHEMA_VERSION = 1


class CameraRecord(BaseModel):
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class PersonRecord(BaseModel):
    pose3d: List[Tuple[float, float, float]]
    pose2d: List[Tuple[float, float]]
    box: Tuple[float, float, float, float]
    visibility: List[bool]
    depth: float = Field(gt=0)

    @model_validator(mode="after")
    def check_joint_counts(self):
        if not (len(self.pose3d) == len(self.pose2d) == len(self.visibility)):
            raise ValueError("pose3d, pose2d and visibility must have the same joint count")
        xmin, ymin, xmax, ymax = self.box
        if xmax < xmin or ymax < ymin:
            raise ValueError(f"Invalid box {self.box}")
        return self


class SceneRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    image_id: str
    camera: CameraRecord
    people: List[PersonRecord] = Field(default_factory=list)


class AnchorSetRecord(BaseModel):
    priors: List[Tuple[float, float]] = Field(min_length=1)


class DetectionRecord(BaseModel):
    image_id: str
    score: float = Field(gt=0, le=1)
    box: Tuple[float, float, float, float]
    pose2d: List[Tuple[float, float]]
    pose3d: List[Tuple[float, float, float]]
    anchor_index: Tuple[int, int, int] = (0, 0, 0)
    root_translation: Optional[Tuple[float, float, float]] = None
    residual: Optional[float] = None


class TrainConfig(BaseModel):
    """Every training default; loaded from a key = value file and CLI flags"""
    model_config = ConfigDict(extra="forbid")

    seed: int = config.SEED
    steps: int = Field(default=5000, ge=1)
    lr: float = Field(default=0.005, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    power: float = Field(default=0.9, ge=0)
    batch_size: int = Field(default=1, ge=1)
    stride: int = Field(default=config.STRIDE, ge=1)
    image_width: Optional[int] = Field(default=None, ge=1)
    image_height: Optional[int] = Field(default=None, ge=1)
    selection: Literal["pono", "box_aware", "pose_aware"] = "pose_aware"
    weighting: Literal["fixed", "task", "task_anchor", "full"] = "full"
    predictor: Literal["direct", "linear"] = "direct"
    cls_prior: float = Field(default=0.1, gt=0, lt=1)
    max_log_weight: float = Field(default=1.5, gt=0)
    checkpoint_every: int = Field(default=1000, ge=0)
    log_every: int = Field(default=100, ge=0)
    score_threshold: float = Field(default=config.SCORE_THRESHOLD, ge=0, lt=1)
    nms_threshold: float = Field(default=config.NMS_THRESHOLD, ge=0, le=1)


class CheckpointRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    config: TrainConfig
    priors: List[Tuple[float, float]]
    skeleton_joints: int
    predictor: Dict[str, Any]
    weights: Dict[str, Any]
    optimizer: Dict[str, Any]
    step: int = Field(ge=0)
    rng_state: Dict[str, Any]
    history_length: int = Field(ge=0)


class EvalReportRecord(BaseModel):
    ap: float
    ap_defined: bool
    mpjpe_mm: Optional[float] = None
    pck3d: float = Field(ge=0, le=100)
    pck3d_per_joint: List[float]
    pck3d_per_distance_bin: List[Tuple[str, Optional[float]]]
    pck3d_per_group: Dict[str, float]
    joint_names: List[str]
    n_detections: int
    n_ground_truths: int
    n_misses: int
    iou_threshold: float
    pck_threshold_mm: float
    extra: Dict[str, float] = Field(default_factory=dict)
