import io
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from src.exceptions import UsageError
from src.schemas.pipeline_schema import EvalReportRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)

LOSS_SERIES = ("total", "cls", "loc", "pose2d", "pose3d")


class PlotService:
    """Static SVG figures, each with a JSON sidecar holding the plotted values"""

    @staticmethod
    def _save(fig, out_path: Path, data: Dict) -> List[Path]:
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", bbox_inches="tight")
        plt.close(fig)
        return [
            FileService.write_text(out_path, buffer.getvalue()),
            FileService.write_json(out_path.with_suffix(".json"), data),
        ]

    @staticmethod
    def plot_history(history: Sequence[Dict[str, float]], out_path: PathLike) -> List[Path]:
        """Loss curves per term against the step counter"""
        if not history:
            raise UsageError("Cannot plot an empty loss history")
        steps = [int(e.get("step", n)) for n, e in enumerate(history)]
        series = {name: [float(e[name]) for e in history] for name in LOSS_SERIES if name in history[0]}

        fig, ax = plt.subplots(figsize=(7, 4))
        for name, values in series.items():
            ax.plot(steps, values, label=name, linewidth=1.2 if name == "total" else 0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("weighted loss")
        ax.legend()
        ax.grid(alpha=0.3)
        return PlotService._save(fig, Path(out_path), {"step": steps, "series": series})

    @staticmethod
    def plot_report(report: EvalReportRecord, out_path: PathLike) -> List[Path]:
        """3DPCK per camera-distance bin; empty bins are drawn at 0 and listed as null"""
        labels = [label for label, _ in report.pck3d_per_distance_bin]
        values = [value for _, value in report.pck3d_per_distance_bin]

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(labels, [0.0 if v is None else v for v in values], color="tab:blue")
        ax.axhline(report.pck3d, color="tab:red", linestyle="--", label=f"all {report.pck3d:.1f}")
        ax.set_xlabel("distance to camera (m)")
        ax.set_ylabel(f"3DPCK@{report.pck_threshold_mm:g}mm (%)")
        ax.set_ylim(0, 100)
        ax.legend()
        return PlotService._save(fig, Path(out_path), {"labels": labels, "values": values, "overall": report.pck3d})
