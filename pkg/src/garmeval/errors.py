"""Error types shared across the package."""

from __future__ import annotations


class ValidationError(Exception):
    """Input data or configuration violates a documented contract.

    Carries optional file/line context so CLI diagnostics can point at
    the offending record. Maps to exit code 1 in the CLI.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)
