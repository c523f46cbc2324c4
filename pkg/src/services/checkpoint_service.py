import logging
from pathlib import Path
from typing import Any, Dict, List

from pydantic import ValidationError

from src.exceptions import DataFormatError
from src.schemas.pipeline_schema import SCHEMA_VERSION, CheckpointRecord
from src.services.file_service import FileService, PathLike

logger = logging.getLogger(__name__)


class CheckpointService:
    """Versioned training checkpoints and loss histories"""

    CHECKPOINT_NAME = "checkpoint.json"
    HISTORY_NAME = "history.json"

    @staticmethod
    def save_checkpoint(path: PathLike, state: Dict[str, Any]) -> Path:
        out = FileService.write_json(path, state)
        logger.info(f"Checkpoint at step {state['step']} written to {out}")
        return out

    @staticmethod
    def load_checkpoint(path: PathLike) -> Dict[str, Any]:
        data = FileService.read_json(path)
        if not isinstance(data, dict) or data.get("schema_version") != SCHEMA_VERSION:
            version = data.get("schema_version") if isinstance(data, dict) else None
            raise DataFormatError(f"{path}: unsupported checkpoint schema_version {version!r}")
        try:
            CheckpointRecord.model_validate(data)
        except ValidationError as e:
            raise DataFormatError(f"{path}: invalid checkpoint: {e}")
        return data

    @staticmethod
    def save_history(path: PathLike, history: List[Dict[str, float]]) -> Path:
        return FileService.write_json(path, history)

    @staticmethod
    def load_history(path: PathLike) -> List[Dict[str, float]]:
        data = FileService.read_json(path)
        if not isinstance(data, list) or not all(isinstance(e, dict) for e in data):
            raise DataFormatError(f"{path}: a loss history is a JSON list of objects")
        return data
