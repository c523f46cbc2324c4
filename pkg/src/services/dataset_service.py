import logging
from pathlib import Path
from typing import List, Sequence

from pydantic import ValidationError

from src.core.geometry import Box2D
from src.core.synthdata import SceneSample
from src.exceptions import DataFormatError
from src.schemas.pipeline_schema import SCHEMA_VERSION, SceneRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)


class DatasetService:
    """Reads and writes scene datasets as JSONL, one scene per line"""

    @staticmethod
    def save_dataset(path: PathLike, scenes: Sequence[SceneSample]) -> Path:
        out = FileService.write_jsonl(path, (s.to_record() for s in scenes))
        logger.info(f"Saved {len(scenes)} scenes to {out}")
        return out

    @staticmethod
    def load_dataset(path: PathLike) -> List[SceneSample]:
        scenes = []
        for line_number, data in FileService.read_jsonl(path):
            if not isinstance(data, dict):
                raise DataFormatError("expected a JSON object per line", line_number=line_number)
            version = data.get("schema_version")
            if version != SCHEMA_VERSION:
                raise DataFormatError(
                    f"unsupported dataset schema_version {version!r}, expected {SCHEMA_VERSION}",
                    line_number=line_number,
                )
            try:
                SceneRecord.model_validate(data)
                scenes.append(SceneSample.from_record(data))
            except (ValidationError, ValueError) as e:
                raise DataFormatError(f"invalid scene record: {e}", line_number=line_number)
        logger.info(f"Loaded {len(scenes)} scenes from {path}")
        return scenes

    @staticmethod
    def all_boxes(scenes: Sequence[SceneSample]) -> List[Box2D]:
        return [p.box for s in scenes for p in s.people]
