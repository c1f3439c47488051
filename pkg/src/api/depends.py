from src.app.entities import CheckOptions, EventCatalogue
from src.app.services.check_service import CheckService
from src.infrastructure.repos import FileSpecRepository, SerialTableMapper, SerialTableRepository


def get_spec_repo() -> FileSpecRepository:
    return FileSpecRepository()


def get_serial_repo(catalogue: EventCatalogue) -> SerialTableRepository:
    return SerialTableRepository(SerialTableMapper(catalogue))


def get_check_service(options: CheckOptions | None = None) -> CheckService:
    return CheckService(spec_repo=get_spec_repo(), options=options)
