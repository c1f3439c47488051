import asyncio
from pathlib import Path
from typing import AsyncIterable, Iterable

from src.app.entities import SerialProcess
from src.infrastructure.repos.base import BaseSerialTableRepository, BaseTextToDomainMapper
from src.infrastructure.repos.exceptions import ObjectDoesNotExists
from src.infrastructure.repos.file_repos.spec_repo import write_file


class SerialTableRepository(BaseSerialTableRepository):
    def __init__(self, mapper: BaseTextToDomainMapper[str, SerialProcess], encoding: str = "utf-8") -> None:
        self.mapper = mapper
        self.encoding = encoding

    async def get(self, id_obj: str) -> SerialProcess:
        try:
            text = await asyncio.to_thread(Path(id_obj).read_text, self.encoding)
        except OSError as e:
            raise ObjectDoesNotExists(f"cannot read {id_obj}: {e.strerror or e}") from None
        return self.mapper.to_domain(text)

    async def get_all(self, ids: Iterable[str]) -> AsyncIterable[SerialProcess]:
        for path in ids:
            yield await self.get(path)

    async def save(self, id_obj: str, obj: SerialProcess, overwrite: bool = True) -> None:
        await write_file(Path(id_obj), self.mapper.from_domain(obj), overwrite, self.encoding)
