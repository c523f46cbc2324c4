import argparse
import logging
import sys
from typing import Callable

from src import config
from src.controllers.pipeline_controller import PipelineController
from src.exceptions import exit_code_for

logger = logging.getLogger(__name__)

controller = PipelineController()


def report_error(error: BaseException) -> int:
    """Print the one-line error record and return the exit code"""
    code = exit_code_for(error)
    message = " ".join(str(error).split()) or error.__class__.__name__
    print(f"error code={code} type={error.__class__.__name__} message={message}", file=sys.stderr)
    return code


def run_command(handler: Callable[[argparse.Namespace], None], args: argparse.Namespace) -> int:
    try:
        handler(args)
        return 0
    except KeyboardInterrupt:
        raise
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        return report_error(e)


def gen_anchors(args: argparse.Namespace):
    """Cluster dataset boxes into an anchor set"""
    result = controller.gen_anchors(args.dataset, args.n_anchors, args.seed, args.out, max_iters=args.max_iters)
    print(f"wrote {result['path']} ({result['n_boxes']} boxes, {result['iterations']} iterations)")
    print(f"mean best IoU: {result['mean_best_iou']:.4f}")


def synth_data(args: argparse.Namespace):
    """Generate a synthetic dataset"""
    result = controller.synth_data(
        args.out, args.seed, args.images,
        args.people_min, args.people_max,
        args.depth_min, args.depth_max,
        args.occlusion,
    )
    print(f"wrote {result['path']} ({result['n_images']} images, {result['n_people']} people)")


TRAIN_OVERRIDES = (
    "seed", "steps", "lr", "momentum", "power", "batch_size", "stride",
    "image_width", "image_height", "selection", "weighting", "predictor",
    "cls_prior", "max_log_weight", "checkpoint_every", "log_every", "score_threshold", "nms_threshold",
)


def train(args: argparse.Namespace):
    """Train a predictor and write checkpoint + history"""
    overrides = {name: getattr(args, name) for name in TRAIN_OVERRIDES}
    result = controller.train(
        args.dataset, args.anchors, args.out,
        config_path=args.config,
        overrides=overrides,
        resume=args.resume,
        progress=not args.no_progress,
    )
    final = result["final"]
    print(f"wrote {result['checkpoint']} and {result['history']} after {result['steps']} steps")
    if final:
        print(f"final total loss: {final['total']:.6f}")


def infer(args: argparse.Namespace):
    """Decode detections with a trained checkpoint"""
    result = controller.infer(
        args.checkpoint, args.dataset, args.out,
        score_threshold=args.score_threshold,
        nms_threshold=args.nms_threshold,
        camera_frame=args.camera_frame,
        bone_sum_m=args.bone_sum_m,
    )
    print(f"wrote {result['path']} ({result['n_detections']} detections over {result['n_images']} images)")


def evaluate(args: argparse.Namespace):
    """Score detections against a dataset"""
    report = controller.evaluate(
        args.detections, args.dataset, args.out,
        iou_threshold=args.iou_threshold,
        pck_threshold_mm=args.pck_threshold_mm,
    )
    mpjpe = "n/a" if report.mpjpe_mm is None else f"{report.mpjpe_mm:.1f}"
    print(f"AP={report.ap:.4f} 3DPCK={report.pck3d:.1f} MPJPE={mpjpe} misses={report.n_misses}/{report.n_ground_truths}")


def plot(args: argparse.Namespace):
    """Emit SVG figures"""
    for path in controller.plot(args.out, history=args.history, report=args.report):
        print(f"wrote {path}")


def _add_parser(subparsers, name: str, **kwargs) -> argparse.ArgumentParser:
    return subparsers.add_parser(name, formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kwargs)


def add_commands(subparsers):
    """Register every sub-command on `subparsers`"""
    p = _add_parser(subparsers, "gen-anchors", help="cluster box sizes into anchor priors")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.add_argument("--n-anchors", type=int, default=config.N_ANCHORS, help="number of priors")
    p.add_argument("--seed", type=int, default=config.SEED, help="k-means++ seed")
    p.add_argument("--max-iters", type=int, default=300, help="k-means iteration cap")
    p.add_argument("--out", required=True, help="anchor set JSON to write")
    p.set_defaults(handler=gen_anchors)

    p = _add_parser(subparsers, "synth-data", help="generate synthetic multi-person scenes")
    p.add_argument("--seed", type=int, default=config.SEED, help="dataset seed")
    p.add_argument("--images", type=int, default=100, help="number of scenes")
    p.add_argument("--people-min", type=int, default=1, help="minimum people per scene")
    p.add_argument("--people-max", type=int, default=5, help="maximum people per scene")
    p.add_argument("--depth-min", type=float, default=2.0, help="minimum root depth (m)")
    p.add_argument("--depth-max", type=float, default=20.0, help="maximum root depth (m)")
    p.add_argument("--occlusion", type=float, default=0.1, help="occlusion rate in [0, 1)")
    p.add_argument("--out", required=True, help="dataset JSONL to write")
    p.set_defaults(handler=synth_data)

    p = _add_parser(subparsers, "train", help="train a predictor (flags override --config)")
    p.add_argument("--dataset", required=True, help="training dataset JSONL")
    p.add_argument("--anchors", help="anchor set JSON (not needed with --resume)")
    p.add_argument("--out", required=True, help="output directory for checkpoint.json and history.json")
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-progress", action="store_true", help="hide the progress bar")
    p.add_argument("--seed", type=int, help="training seed (default %d)" % config.SEED)
    p.add_argument("--steps", type=int, help="decay horizon T (default 5000)")
    p.add_argument("--lr", type=float, help="initial learning rate (default 0.005)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default 0.9)")
    p.add_argument("--power", type=float, help="polynomial decay power (default 0.9)")
    p.add_argument("--batch-size", type=int, help="scenes per step (default 1)")
    p.add_argument("--stride", type=int, help="pixels per grid cell (default %d)" % config.STRIDE)
    p.add_argument("--image-width", type=int, help="grid image width (default: dataset camera)")
    p.add_argument("--image-height", type=int, help="grid image height (default: dataset camera)")
    p.add_argument("--selection", choices=["pono", "box_aware", "pose_aware"], help="readout selection (default pose_aware)")
    p.add_argument("--weighting", choices=["fixed", "task", "task_anchor", "full"], help="trainable loss weights (default full)")
    p.add_argument("--predictor", choices=["direct", "linear"], help="predictor kind (default direct)")
    p.add_argument("--cls-prior", type=float, help="initial readout probability (default 0.1)")
    p.add_argument("--max-log-weight", type=float, help="upper bound on every trainable log loss weight (default 1.5)")
    p.add_argument("--checkpoint-every", type=int, help="steps between checkpoints, 0 = end only (default 1000)")
    p.add_argument("--log-every", type=int, help="steps between log lines, 0 = silent (default 100)")
    p.add_argument("--score-threshold", type=float, help="stored inference score threshold (default %g)" % config.SCORE_THRESHOLD)
    p.add_argument("--nms-threshold", type=float, help="stored inference NMS threshold (default %g)" % config.NMS_THRESHOLD)
    p.set_defaults(handler=train)

    p = _add_parser(subparsers, "infer", help="decode detections with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint JSON")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.add_argument("--out", required=True, help="detection JSONL to write")
    p.add_argument("--score-threshold", type=float, help="score cutoff (default: checkpoint config)")
    p.add_argument("--nms-threshold", type=float, help="NMS IoU threshold (default: checkpoint config)")
    p.add_argument("--camera-frame", action="store_true", help="attach camera-frame root translations")
    p.add_argument("--bone-sum-m", type=float, help="metric bone-length sum (default: skeleton rest pose)")
    p.set_defaults(handler=infer)

    p = _add_parser(subparsers, "eval", help="evaluate detections against a dataset")
    p.add_argument("--detections", required=True, help="detection JSONL")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.add_argument("--out", required=True, help="report JSON (a .txt table is written alongside)")
    p.add_argument("--iou-threshold", type=float, default=0.5, help="AP IoU threshold")
    p.add_argument("--pck-threshold-mm", type=float, default=config.PCK_THRESHOLD_MM, help="3DPCK threshold (mm)")
    p.set_defaults(handler=evaluate)

    p = _add_parser(subparsers, "plot", help="write SVG figures")
    p.add_argument("--history", help="loss history JSON")
    p.add_argument("--report", help="evaluation report JSON")
    p.add_argument("--out", required=True, help="SVG file to write (a .json sidecar is written alongside)")
    p.set_defaults(handler=plot)
