import re

from src.app.entities import END, IN_ACK, IN_RDT, START, Event, EventCatalogue, SerialEntry, SerialProcess
from src.infrastructure.repos.base import BaseTextToDomainMapper
from src.infrastructure.repos.exceptions import MalformedTable

_ROW = re.compile(r"^\((?P<ev>[^,<>()]+),\s*<(?P<offers>[^>]*)>,\s*(?P<level>\d+)\)$")
_DEPTH = re.compile(r"^#\s*depth\s+(?P<depth>\d+)$")


class SerialTableMapper(BaseTextToDomainMapper[str, SerialProcess]):
    """Mapper for the ``(ev, <a_ev>, level)`` table, one row per line"""

    MARKERS = {str(e): e for e in (START, END, IN_ACK, IN_RDT)}

    def __init__(self, catalogue: EventCatalogue):
        self.catalogue = catalogue

    def _event(self, name: str, line: int) -> Event:
        name = name.strip()
        if name in self.MARKERS:
            return self.MARKERS[name]
        try:
            return self.catalogue.lookup(name)
        except KeyError:
            raise MalformedTable(f"line {line}: unknown event {name}") from None

    def to_domain(self, data_obj: str) -> SerialProcess:
        entries = []
        source_depth = 0
        for number, raw in enumerate(data_obj.splitlines(), start=1):
            row = raw.strip()
            if not row:
                continue
            header = _DEPTH.match(row)
            if header:
                source_depth = int(header["depth"])
                continue
            if row.startswith("#"):
                continue
            match = _ROW.match(row)
            if match is None:
                raise MalformedTable(f"line {number}: {row!r} is not an (ev, <a_ev>, level) row")
            offers = tuple(self._event(n, number) for n in match["offers"].split(",") if n.strip())
            entries.append(SerialEntry(self._event(match["ev"], number), offers, int(match["level"])))

        try:
            return SerialProcess(tuple(entries), self.catalogue.inputs, self.catalogue.outputs, source_depth)
        except ValueError as e:
            raise MalformedTable(str(e)) from None

    def from_domain(self, domain_obj: SerialProcess) -> str:
        rows = [f"# depth {domain_obj.source_depth}"]
        rows.extend(str(entry) for entry in domain_obj.entries)
        return "\n".join(rows) + "\n"
