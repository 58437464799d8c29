"""Exception hierarchy shared by every vflsim module."""

from __future__ import annotations


class VFLError(Exception):
    """Base class for all library errors."""


class DimensionError(VFLError):
    """Tensor shapes are incompatible."""


class NumericError(VFLError):
    """A NaN or Inf appeared where finite values are required."""


class StateError(VFLError):
    """An object was used in a state it does not support."""


class InputError(VFLError, ValueError):
    """An argument is outside its documented domain."""


class ParseError(VFLError):
    """A text input could not be parsed.

    Attributes:
        row: 1-based line number of the offending record, if known.
        col: 1-based column number, if known.
    """

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.col = col


class ProtocolError(VFLError):
    """A message crossing the party boundary violated the protocol."""

    def __init__(self, message: str, party: int | None = None, round_: int | None = None):
        if party is not None or round_ is not None:
            message = f"{message} [party={party}, round={round_}]"
        super().__init__(message)
        self.party = party
        self.round = round_


class ConfigError(VFLError):
    """An experiment configuration is invalid."""
