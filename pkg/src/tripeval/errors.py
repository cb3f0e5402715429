"""Exception hierarchy shared by all tripeval modules."""

from __future__ import annotations


class TripEvalError(Exception):
    """Base class for every error raised by tripeval."""


class InvalidTrajectoryError(TripEvalError, ValueError):
    pass


class OutOfBoundsError(TripEvalError, ValueError):
    pass


class GridMismatchError(TripEvalError, ValueError):
    pass


class NetworkParseError(TripEvalError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class DanglingReferenceError(TripEvalError, ValueError):
    def __init__(self, edge_ids: list[str]):
        self.edge_ids = list(edge_ids)
        super().__init__("edges reference unknown nodes: " + ", ".join(self.edge_ids))


class NoRouteError(TripEvalError):
    pass


class RoutingFailedError(TripEvalError):
    pass


class InvalidBudgetError(TripEvalError, ValueError):
    pass


class UndefinedMetricError(TripEvalError, ValueError):
    pass


class ConfigError(TripEvalError, ValueError):
    pass


class GateFailure(TripEvalError):
    """A dataset is too coarse for map matching."""


class MissingInputsError(TripEvalError):
    """Input files required by a command are absent."""

    def __init__(self, paths: list[str]):
        self.paths = list(paths)
        super().__init__("missing input files:\n  " + "\n  ".join(self.paths))
