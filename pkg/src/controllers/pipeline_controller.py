import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from src.core.anchors import mean_best_iou, run_kmeans
from src.core.decode import recover_root_translation
from src.core.metrics import EvalReport, evaluate_detections
from src.core.synthdata import Camera, default_skeleton, generate_dataset
from src.exceptions import NumericalError, UsageError
from src.schemas.pipeline_schema import TrainConfig
from src.services.anchor_service import AnchorService
from src.services.checkpoint_service import CheckpointService
from src.services.dataset_service import DatasetService
from src.services.detection_service import DetectionService
from src.services.plot_service import PlotService
from src.services.report_service import ReportService
from src.training.trainer import Trainer

logger = logging.getLogger(__name__)


def load_train_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Defaults < key = value file < explicit overrides (None values are ignored)"""
    values: Dict[str, Any] = {}
    if path:
        if not Path(path).is_file():
            raise UsageError(f"Config file not found: {path}")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return TrainConfig.model_validate(values)
    except ValidationError as e:
        raise UsageError(f"Invalid training config: {e}")


class PipelineController:
    """Business logic behind each command"""

    def gen_anchors(self, dataset: str, n_anchors: int, seed: int, out: str, max_iters: int = 300) -> Dict[str, Any]:
        """Cluster the dataset's box sizes into priors"""
        boxes = DatasetService.all_boxes(DatasetService.load_dataset(dataset))
        if not boxes:
            raise UsageError(f"Dataset {dataset} contains no people to cluster")
        try:
            clustering = run_kmeans(boxes, n_anchors, max_iters=max_iters, seed=seed)
        except ValueError as e:
            raise UsageError(str(e))
        priors = clustering.anchor_set
        path = AnchorService.save_anchors(out, priors)
        return {
            "path": str(path),
            "n_boxes": len(boxes),
            "iterations": clustering.iterations,
            "mean_best_iou": mean_best_iou(boxes, priors),
        }

    def synth_data(self, out: str, seed: int, images: int, people_min: int, people_max: int,
                   depth_min: float, depth_max: float, occlusion: float,
                   camera: Optional[Camera] = None) -> Dict[str, Any]:
        """Generate and save a synthetic dataset"""
        try:
            scenes = generate_dataset(
                seed, images,
                n_people_range=(people_min, people_max),
                depth_range_m=(depth_min, depth_max),
                camera=camera,
                occlusion_rate=occlusion,
            )
        except ValueError as e:
            raise UsageError(str(e))
        path = DatasetService.save_dataset(out, scenes)
        return {"path": str(path), "n_images": len(scenes), "n_people": sum(s.n_people for s in scenes)}

    def train(self, dataset: str, anchors: str, out_dir: str, config_path: Optional[str] = None,
              overrides: Optional[Dict[str, Any]] = None, resume: Optional[str] = None,
              progress: bool = True) -> Dict[str, Any]:
        """Train (or resume) a predictor and write checkpoint + loss history into `out_dir`"""
        scenes = DatasetService.load_dataset(dataset)
        if not scenes:
            raise UsageError(f"Dataset {dataset} is empty")
        out_dir = Path(out_dir)
        checkpoint_path = out_dir / CheckpointService.CHECKPOINT_NAME
        history_path = out_dir / CheckpointService.HISTORY_NAME

        if resume:
            given = sorted(f"--{k.replace('_', '-')}" for k, v in (overrides or {}).items() if v is not None)
            if config_path:
                given.insert(0, "--config")
            if given:
                raise UsageError(f"--resume keeps the checkpoint's settings; drop {', '.join(given)}")
            state = CheckpointService.load_checkpoint(resume)
            history_file = Path(resume).with_name(CheckpointService.HISTORY_NAME)
            history = CheckpointService.load_history(history_file) if history_file.is_file() else []
            trainer = Trainer.from_state_dict(state, scenes, history=history)
            logger.info(f"Resuming from step {trainer.step} of {trainer.config.steps}")
        else:
            if not anchors:
                raise UsageError("train needs --anchors unless --resume is given")
            cfg = load_train_config(config_path, overrides)
            trainer = Trainer(cfg, scenes, AnchorService.load_anchors(anchors))

        def save(t: Trainer):
            CheckpointService.save_checkpoint(checkpoint_path, t.state_dict())
            CheckpointService.save_history(history_path, t.history)

        history = trainer.run(on_checkpoint=save, progress=progress)
        final = history[-1] if history else {}
        return {
            "checkpoint": str(checkpoint_path),
            "history": str(history_path),
            "steps": trainer.step,
            "final": final,
        }

    def infer(self, checkpoint: str, dataset: str, out: str,
              score_threshold: Optional[float] = None, nms_threshold: Optional[float] = None,
              camera_frame: bool = False, bone_sum_m: Optional[float] = None) -> Dict[str, Any]:
        """Decode detections for every scene of `dataset` with a trained checkpoint"""
        state = CheckpointService.load_checkpoint(checkpoint)
        scenes = DatasetService.load_dataset(dataset)
        if not scenes:
            raise UsageError(f"Dataset {dataset} is empty")
        trainer = Trainer.from_state_dict(state, scenes)
        skeleton = trainer.skeleton
        if bone_sum_m is None:
            bone_sum_m = skeleton.rest_bone_sum
        if bone_sum_m <= 0:
            raise UsageError(f"--bone-sum-m must be positive, got {bone_sum_m}")

        detections = []
        for scene in scenes:
            dets = trainer.detect(scene, score_threshold, nms_threshold)
            if camera_frame:
                for det in dets:
                    metric = (det.pose3d - det.pose3d[skeleton.root_index]) * bone_sum_m
                    try:
                        root = recover_root_translation(metric, det.pose2d, scene.camera)
                    except NumericalError as e:
                        logger.warning(f"No camera-frame root for a detection in {scene.image_id}: {e}")
                        continue
                    det.root_translation = root.translation
                    det.residual = root.residual
            detections.extend(dets)

        path = DetectionService.save_detections(out, detections)
        return {"path": str(path), "n_detections": len(detections), "n_images": len(scenes)}

    def evaluate(self, detections: str, dataset: str, out: str,
                 iou_threshold: float = 0.5, pck_threshold_mm: Optional[float] = None) -> EvalReport:
        """Score detections against the dataset and write the report files"""
        dets = DetectionService.load_detections(detections)
        scenes = DatasetService.load_dataset(dataset)
        kwargs = {} if pck_threshold_mm is None else {"pck_threshold_mm": pck_threshold_mm}
        report = evaluate_detections(dets, scenes, default_skeleton(), iou_threshold=iou_threshold, **kwargs)
        ReportService.save_report(out, report)
        return report

    def plot(self, out: str, history: Optional[str] = None, report: Optional[str] = None) -> List[str]:
        """Loss curves from a history file or the distance-wise 3DPCK bars of a report"""
        if bool(history) == bool(report):
            raise UsageError("plot needs exactly one of --history or --report")
        if history:
            written = PlotService.plot_history(CheckpointService.load_history(history), out)
        else:
            written = PlotService.plot_report(ReportService.load_report(report), out)
        return [str(p) for p in written]
