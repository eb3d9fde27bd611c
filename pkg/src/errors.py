from __future__ import annotations

from typing import Optional


class SneakrefError(Exception):
    pass


class ConfigError(SneakrefError):
    pass


class ParseError(SneakrefError):
    """Input bytes could not be decoded; `offset` points at the failure when known."""

    def __init__(self, reason: str, offset: Optional[int] = None):
        self.reason = reason
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{reason}{where}")


class NotRegistered(SneakrefError):
    def __init__(self, doi: str):
        self.doi = doi
        super().__init__(f"DOI not registered: {doi}")


class TransportError(SneakrefError):
    def __init__(self, doi: str, detail: str):
        self.doi = doi
        self.detail = detail
        super().__init__(f"{doi}: {detail}")


class ExtractionServiceError(SneakrefError):
    pass


class MalformedTei(SneakrefError):
    pass


class UnreadablePdf(SneakrefError):
    pass


class InvalidInput(SneakrefError):
    pass


class Undecidable(SneakrefError):
    """Two references carry nothing that can be compared."""
