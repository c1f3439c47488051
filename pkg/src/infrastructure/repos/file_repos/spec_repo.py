import asyncio
import logging
from pathlib import Path
from typing import AsyncIterable, Iterable, Optional

from src.app.printer import format_spec
from src.app.services.parser_service import parse_spec
from src.app.syntax import Spec
from src.infrastructure.repos.base import BaseSpecRepository
from src.infrastructure.repos.exceptions import ObjectAlreadyExists, ObjectDoesNotExists

logger = logging.getLogger(__name__)


class FileSpecRepository(BaseSpecRepository):
    def __init__(self, encoding: str = "utf-8") -> None:
        self.encoding = encoding

    def read_source(self, path: str, including: Optional[str] = None) -> tuple[str, str]:
        resolved = Path(path)
        if including is not None and not resolved.is_absolute():
            resolved = Path(including).parent / resolved
        try:
            text = resolved.read_text(encoding=self.encoding)
        except OSError as e:
            raise ObjectDoesNotExists(f"cannot read {resolved}: {e.strerror or e}") from None
        logger.debug("read %d characters from %s", len(text), resolved)
        return text, str(resolved)

    def _load(self, path: str) -> Spec:
        text, source = self.read_source(path)
        return parse_spec(text, source, loader=self.read_source)

    async def get(self, id_obj: str) -> Spec:
        return await asyncio.to_thread(self._load, id_obj)

    async def get_all(self, ids: Iterable[str]) -> AsyncIterable[Spec]:
        for path in ids:
            yield await self.get(path)

    async def save(self, id_obj: str, obj: Spec, overwrite: bool = True) -> None:
        await write_file(Path(id_obj), format_spec(obj), overwrite, self.encoding)


async def write_file(path: Path, text: str, overwrite: bool, encoding: str) -> None:
    if path.exists() and not overwrite:
        raise ObjectAlreadyExists(f"{path} already exists")
    try:
        await asyncio.to_thread(path.write_text, text, encoding)
    except OSError as e:
        raise ObjectDoesNotExists(f"cannot write {path}: {e.strerror or e}") from None
