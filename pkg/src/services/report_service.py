import logging
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from src.core.metrics import EvalReport
from src.exceptions import DataFormatError
from src.schemas.pipeline_schema import EvalReportRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)


def _pct(value: Optional[float]) -> str:
    return "   n/a" if value is None else f"{value:6.1f}"


class ReportService:
    """Evaluation reports as JSON plus plain-text tables"""

    @staticmethod
    def format_tables(report: EvalReport) -> str:
        lines: List[str] = []
        mpjpe = "n/a" if report.mpjpe_mm is None else f"{report.mpjpe_mm:.1f}"
        ap = f"{report.ap * 100:.1f}" + ("" if report.ap_defined else " (undefined: no ground truth)")
        lines.append(f"AP@{report.iou_threshold:g}: {ap}")
        lines.append(f"3DPCK@{report.pck_threshold_mm:g}mm: {report.pck3d:.1f}")
        lines.append(f"MPJPE (mm, detected people): {mpjpe}")
        lines.append(
            f"Detections: {report.n_detections}  Ground truths: {report.n_ground_truths}  Misses: {report.n_misses}"
        )
        lines.append("")

        labels = [label for label, _ in report.pck3d_per_distance_bin]
        lines.append("Distance-wise 3DPCK (m)")
        lines.append(" | ".join(f"{label:>6}" for label in labels + ["All"]))
        lines.append(" | ".join(_pct(v) for _, v in report.pck3d_per_distance_bin) + " | " + _pct(report.pck3d))
        lines.append("")

        groups = list(report.pck3d_per_group)
        lines.append("Joint-group 3DPCK")
        lines.append(" | ".join(f"{g:>9}" for g in groups))
        lines.append(" | ".join(f"{report.pck3d_per_group[g]:9.1f}" for g in groups))
        lines.append("")

        lines.append("Joint-wise 3DPCK")
        width = max(len(n) for n in report.joint_names) if report.joint_names else 5
        for name, value in zip(report.joint_names, report.pck3d_per_joint):
            lines.append(f"{name:<{width}}  {value:6.1f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def save_report(json_path: PathLike, report: EvalReport) -> List[Path]:
        json_path = Path(json_path)
        written = [FileService.write_json(json_path, report.to_dict())]
        written.append(FileService.write_text(json_path.with_suffix(".txt"), ReportService.format_tables(report)))
        return written

    @staticmethod
    def load_report(path: PathLike) -> EvalReportRecord:
        data = FileService.read_json(path)
        try:
            return EvalReportRecord.model_validate(data)
        except ValidationError as e:
            raise DataFormatError(f"{path}: invalid report: {e}")
