from __future__ import annotations

from collections.abc import Iterable


class CciError(Exception):
    """Base exception for ccival errors."""

    pass


class GraphError(CciError):
    """Malformed graph (cycle, self loop, bad index, duplicate edge)."""

    pass


class InconsistentGraphError(GraphError):
    """Orientation conflict or a graph without consistent DAG extension."""

    pass


class VariableMismatchError(CciError):
    """Two objects that must share a variable set do not."""

    def __init__(self, expected: int, actual: int, what: str = "variables") -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} mismatch: expected {expected}, got {actual}")


class DegenerateDataError(CciError):
    """Data cannot support the requested statistic."""

    def __init__(self, message: str, variables: Iterable[int] = ()) -> None:
        self.variables = tuple(variables)
        self.message = message
        if self.variables:
            message = f"{message} (variables {list(self.variables)})"
        super().__init__(message)


class FormatError(CciError):
    """A text, CSV or JSON document could not be parsed or written."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MechanismError(CciError):
    """Invalid mechanism simulation setup."""

    pass


class UsageError(CciError):
    """Bad command line."""

    pass
