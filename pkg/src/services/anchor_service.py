import logging
from pathlib import Path

from pydantic import ValidationError

from src.core.anchors import AnchorSet
from src.exceptions import DataFormatError
from src.schemas.pipeline_schema import AnchorSetRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)


class AnchorService:
    """Anchor set JSON files: {"priors": [[w, h], ...]} sorted by area"""

    @staticmethod
    def save_anchors(path: PathLike, priors: AnchorSet) -> Path:
        return FileService.write_json(path, priors.to_dict())

    @staticmethod
    def load_anchors(path: PathLike) -> AnchorSet:
        data = FileService.read_json(path)
        try:
            record = AnchorSetRecord.model_validate(data)
            return AnchorSet(tuple(tuple(p) for p in record.priors))
        except (ValidationError, ValueError) as e:
            raise DataFormatError(f"{path}: invalid anchor set: {e}")
