"""Exception types raised by the simulator.

Every error carries enough structure (attributes, not just a message) for
callers to report what went wrong without parsing strings.
"""
from __future__ import annotations


class SimulationError(Exception):
    """Base class for all fedanchor errors."""


class ShapeMismatchError(SimulationError):
    """An array did not match the network geometry along one axis."""

    def __init__(self, axis: str, expected: int, got: int):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"axis '{axis}': expected length {expected}, got {got}")


class PartitionError(SimulationError):
    """Data partitioning could not satisfy its constraints."""


class ProtocolViolationError(SimulationError):
    """A client payload broke the round protocol."""

    def __init__(self, client_id: int, detail: str):
        self.client_id = client_id
        self.detail = detail
        super().__init__(f"client {client_id}: {detail}")


class AggregationError(SimulationError):
    """Server-side aggregation hit an undefined weighting."""


class ConfigError(SimulationError):
    """A config file or config value is invalid."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where += f" (key '{key}'"
            where += f", line {line})" if line is not None else ")"
        elif line is not None:
            where += f" (line {line})"
        super().__init__(message + where)


class TraceError(SimulationError):
    """A trace file is malformed or inconsistent."""
