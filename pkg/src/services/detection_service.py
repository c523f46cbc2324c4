import logging
from pathlib import Path
from typing import List, Sequence

from pydantic import ValidationError

from src.core.decode import Detection
from src.exceptions import DataFormatError
from src.schemas.pipeline_schema import DetectionRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)


class DetectionService:
    """Detection JSONL files, one detection per line"""

    @staticmethod
    def save_detections(path: PathLike, dets: Sequence[Detection]) -> Path:
        out = FileService.write_jsonl(path, (d.to_dict() for d in dets))
        logger.info(f"Saved {len(dets)} detections to {out}")
        return out

    @staticmethod
    def load_detections(path: PathLike) -> List[Detection]:
        dets = []
        for line_number, data in FileService.read_jsonl(path):
            try:
                DetectionRecord.model_validate(data)
                dets.append(Detection.from_dict(data))
            except (ValidationError, ValueError, TypeError) as e:
                raise DataFormatError(f"invalid detection record: {e}", line_number=line_number)
        return dets
