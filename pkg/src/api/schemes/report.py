from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.app.entities import canonical


def _names(events) -> list[str]:
    return [str(e) for e in canonical(events)]


class _Stats(BaseModel):
    model_config = ConfigDict(from_attributes=True)
    states_explored: int
    elapsed: float = Field(exclude=True)


class _Witness(BaseModel):
    model_config = ConfigDict(from_attributes=True)
    trace: list[str]
    event: Optional[str] = None
    refusal: Optional[list[str]] = None
    detail: str = ""
    tags: list[str] = []

    @field_validator("trace", mode="before")
    @classmethod
    def _trace(cls, value):
        return [str(e) for e in value]

    @field_validator("event", mode="before")
    @classmethod
    def _event(cls, value):
        return None if value is None else str(value)

    @field_validator("refusal", mode="before")
    @classmethod
    def _refusal(cls, value):
        return None if value is None else _names(value)


class GetRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    kind: str
    text: str
    status: str
    method: Optional[str] = None
    witness: Optional[_Witness] = Field(None, validation_alias="counterexample")
    stats: _Stats
    notes: list[str] = []
    diagnostics: list[str] = []
    source: Optional[str] = None
    line: int = 0


class GetReport(BaseModel):
    """Structured report: timing is left out so equal runs give equal documents."""

    model_config = ConfigDict(from_attributes=True)

    tool: str
    version: str
    config: dict
    records: list[GetRecord]
    summary: dict[str, int]
    exit_code: int
