from .report import GetRecord, GetReport

__all__ = ["GetRecord", "GetReport"]
