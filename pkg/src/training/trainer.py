"""
Training loop: SGD over predictor parameters and loss log-weights jointly.

One step draws `batch_size` scenes with the trainer's own generator, sums
their gradients (averaged over the batch) and applies a single momentum
update. All state needed to continue a run bit-for-bit (parameters,
velocities, step counter, generator state) is exported by `state_dict`.

Trainable log-weights never exceed `max_log_weight`; they are clipped after
each update.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.core.anchors import AnchorGrid, AnchorSet, GroundTruthScene, MatchResult, match
from src.core.decode import Detection, decode, nms
from src.core.losses import (
    TASKS,
    LossWeights,
    RegressionTargets,
    SelectionStrategy,
    WeightingMode,
    evaluate,
    regression_targets,
)
from src.core.synthdata import SceneSample, Skeleton, default_skeleton, ground_truth_from_sample
from src.exceptions import NumericalError, UsageError
from src.schemas.pipeline_schema import SCHEMA_VERSION, TrainConfig
from src.training.optimizer import OptimizerState, lr_at, sgd_step
from src.training.predictors import Predictor, make_predictor

logger = logging.getLogger(__name__)


@dataclass
class TrainingExample:
    """A scene with its matching and regression targets, computed once"""
    sample: SceneSample
    truth: GroundTruthScene
    matches: MatchResult
    targets: RegressionTargets


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def resolve_image_size(cfg: TrainConfig, scenes: Sequence[SceneSample]) -> Tuple[int, int]:
    """Configured image size, else the first scene's camera"""
    if cfg.image_width is not None and cfg.image_height is not None:
        width, height = cfg.image_width, cfg.image_height
    elif scenes:
        width, height = scenes[0].camera.width, scenes[0].camera.height
    else:
        raise UsageError("Image size is unknown: set image_width/image_height or provide scenes")
    return width, height


class Trainer:
    """Trains one predictor and its LossWeights on a fixed list of scenes"""

    def __init__(self, cfg: TrainConfig, scenes: Sequence[SceneSample], priors: AnchorSet,
                 skeleton: Optional[Skeleton] = None):
        if not scenes:
            raise UsageError("Training needs at least one scene")
        width, height = resolve_image_size(cfg, scenes)
        cfg = cfg.model_copy(update={"image_width": width, "image_height": height})
        self.config = cfg
        self.skeleton = skeleton or default_skeleton()
        self.priors = priors
        self.grid = AnchorGrid.for_image(width, height, cfg.stride, priors)
        self.strategy = SelectionStrategy(cfg.selection)
        self.trainable = LossWeights.trainable(WeightingMode(cfg.weighting))

        self.examples: List[TrainingExample] = []
        for sample in scenes:
            truth = ground_truth_from_sample(sample, self.skeleton)
            m = match(self.grid, truth)
            self.examples.append(TrainingExample(sample, truth, m, regression_targets(m, self.grid)))

        n_joints = self.skeleton.n_joints
        self.predictor: Predictor = make_predictor(cfg.predictor, self.grid, n_joints, logit(cfg.cls_prior))
        for ex in self.examples:
            self.predictor.register(ex.truth)
        self.weights = LossWeights.zeros(self.grid.n_anchors, n_joints)
        self.optimizer = OptimizerState(lr0=cfg.lr, total_steps=cfg.steps, power=cfg.power, momentum=cfg.momentum)
        self.rng = np.random.default_rng(cfg.seed)
        self.history: List[Dict[str, float]] = []

        n_positive = sum(ex.matches.n_positive for ex in self.examples)
        logger.info(
            f"Trainer ready: {len(self.examples)} scenes, grid {self.grid.shape}, "
            f"{n_positive} positive anchors, predictor={cfg.predictor}, weighting={cfg.weighting}"
        )

    @property
    def step(self) -> int:
        return self.optimizer.step

    @property
    def done(self) -> bool:
        return self.optimizer.step >= self.config.steps

    # ============================================================
    # Stepping
    # ============================================================

    def _check_finite(self, entry: Dict[str, float], image_id: str):
        for term in TASKS + ("total",):
            if not math.isfinite(entry[term]):
                raise NumericalError(
                    f"Non-finite {term} loss at step {self.step} on {image_id}",
                    term=term,
                    details={"step": self.step, "image_id": image_id, **entry},
                )

    def train_step(self) -> Dict[str, float]:
        """One SGD update; returns the batch-averaged loss breakdown"""
        lr = lr_at(self.optimizer, self.optimizer.step)
        batch = self.rng.integers(0, len(self.examples), size=self.config.batch_size)
        scale = 1.0 / len(batch)

        self.predictor.zero_grad()
        weight_grads = {name: np.zeros_like(v) for name, v in self.weights.arrays().items()}
        totals: Dict[str, float] = {}
        for index in batch:
            ex = self.examples[int(index)]
            pred = self.predictor.forward(ex.truth)
            breakdown, grads = evaluate(pred, ex.matches, self.grid, self.weights, self.strategy, targets=ex.targets)
            entry = breakdown.to_dict()
            self._check_finite(entry, ex.truth.image_id)

            for value in grads.predictions.arrays().values():
                value *= scale
            self.predictor.backward(ex.truth, grads.predictions)
            for name, value in grads.weights.arrays().items():
                weight_grads[name] += scale * value
            for key, value in entry.items():
                totals[key] = totals.get(key, 0.0) + scale * value

        params = dict(self.predictor.parameters())
        param_grads = dict(self.predictor.grads)
        for name, value in self.weights.arrays().items():
            if self.trainable[name]:
                params[f"weights/{name}"] = value
                param_grads[f"weights/{name}"] = weight_grads[name]

        totals["step"] = self.optimizer.step
        totals["lr"] = lr
        sgd_step(params, param_grads, self.optimizer)
        for name, value in self.weights.arrays().items():
            if self.trainable[name]:
                np.minimum(value, self.config.max_log_weight, out=value)
        self.history.append(totals)
        return totals

    def run(self, on_checkpoint: Optional[Callable[["Trainer"], None]] = None,
            progress: bool = True) -> List[Dict[str, float]]:
        """Step until the schedule ends, checkpointing every `checkpoint_every` steps"""
        cfg = self.config
        with tqdm(total=cfg.steps, initial=self.step, disable=not progress, desc="train") as bar:
            while not self.done:
                entry = self.train_step()
                bar.update(1)
                if cfg.log_every and self.step % cfg.log_every == 0:
                    logger.info(
                        f"step {self.step}/{cfg.steps} total={entry['total']:.5f} cls={entry['cls']:.5f} "
                        f"loc={entry['loc']:.5f} pose2d={entry['pose2d']:.5f} pose3d={entry['pose3d']:.5f} "
                        f"n_pos={entry['n_positive']:.0f} n_readout={entry['n_readout']:.0f} lr={entry['lr']:.6f}"
                    )
                if on_checkpoint and cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    on_checkpoint(self)
        if on_checkpoint and not (cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0):
            on_checkpoint(self)
        return self.history

    # ============================================================
    # Inference on the training geometry
    # ============================================================

    def detect(self, sample: SceneSample, score_threshold: Optional[float] = None,
               nms_threshold: Optional[float] = None) -> List[Detection]:
        truth = ground_truth_from_sample(sample, self.skeleton)
        pred = self.predictor.forward(truth)
        threshold = self.config.score_threshold if score_threshold is None else score_threshold
        dets = decode(pred, self.grid, threshold, image_id=sample.image_id)
        return nms(dets, self.config.nms_threshold if nms_threshold is None else nms_threshold)

    # ============================================================
    # State
    # ============================================================

    def state_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.model_dump(),
            "priors": [list(p) for p in self.priors.priors],
            "skeleton_joints": self.skeleton.n_joints,
            "predictor": self.predictor.state_dict(),
            "weights": {name: v.tolist() for name, v in self.weights.arrays().items()},
            "optimizer": self.optimizer.to_dict(),
            "step": self.optimizer.step,
            "rng_state": self.rng.bit_generator.state,
            "history_length": len(self.history),
        }

    def load_state_dict(self, data: Dict[str, Any], history: Optional[List[Dict[str, float]]] = None):
        if data["skeleton_joints"] != self.skeleton.n_joints:
            raise ValueError(f"Checkpoint has {data['skeleton_joints']} joints, skeleton has {self.skeleton.n_joints}")
        self.predictor.load_state_dict(data["predictor"])
        self.weights = LossWeights.from_arrays(data["weights"])
        self.optimizer = OptimizerState.from_dict(data["optimizer"])
        self.rng.bit_generator.state = data["rng_state"]
        if history is not None:
            self.history = list(history[: data["history_length"]])

    @classmethod
    def from_state_dict(cls, data: Dict[str, Any], scenes: Sequence[SceneSample],
                        skeleton: Optional[Skeleton] = None,
                        history: Optional[List[Dict[str, float]]] = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint and continue its schedule"""
        cfg = TrainConfig.model_validate(data["config"])
        priors = AnchorSet(tuple(tuple(p) for p in data["priors"]))
        trainer = cls(cfg, scenes, priors, skeleton)
        trainer.load_state_dict(data, history)
        return trainer
