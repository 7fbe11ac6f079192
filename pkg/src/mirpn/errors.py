"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class MirPnError(Exception):
    """Base class for all errors raised by mirpn."""


class ParseError(MirPnError):
    def __init__(self, message: str, line: int = 0, col: int = 0, file: str | None = None):
        self.message = message
        self.line = line
        self.col = col
        self.file = file
        prefix = f"{file}:" if file else ""
        super().__init__(f"{prefix}{line}:{col}: {message}")


class AnalysisError(MirPnError):
    pass


class BuildError(MirPnError):
    pass


class FireError(MirPnError):
    pass


class ExportError(MirPnError):
    pass
