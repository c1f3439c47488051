from .file_repos.mappers import SerialTableMapper
from .file_repos.serial_repo import SerialTableRepository
from .file_repos.spec_repo import FileSpecRepository

__all__ = [
    "FileSpecRepository",
    "SerialTableRepository",
    "SerialTableMapper",
]
