import json
import logging
from pathlib import Path
from typing import Any, Iterable, Iterator, Tuple, Union

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.exceptions import DataFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class FileService:
    """Text and JSON file access shared by the other services"""

    @staticmethod
    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
        retry=retry_if_exception_type(OSError),
        reraise=True
    )
    def write_text(path: PathLike, text: str) -> Path:
        """Write through a temporary sibling file, then rename over the target"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
        logger.debug(f"Wrote {path}")
        return path

    @staticmethod
    def write_json(path: PathLike, data: Any) -> Path:
        return FileService.write_text(path, json.dumps(data, indent=1) + "\n")

    @staticmethod
    def write_jsonl(path: PathLike, records: Iterable[Any]) -> Path:
        return FileService.write_text(path, "".join(json.dumps(r) + "\n" for r in records))

    @staticmethod
    def read_json(path: PathLike) -> Any:
        text = Path(path).read_text(encoding="utf-8")
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: invalid JSON ({e.msg})", line_number=e.lineno)

    @staticmethod
    def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Any]]:
        """Yield (line number, object) for every non-blank line"""
        with open(path, encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield line_number, json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataFormatError(f"{path}: invalid JSON ({e.msg})", line_number=line_number)
