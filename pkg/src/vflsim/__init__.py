"""Vertical federated learning simulator: split training, party-wise dropout,
completion attacks, and a mutual-information defense for passive parties."""

from .errors import (ConfigError, DimensionError, InputError, NumericError, ParseError,
                     ProtocolError, StateError, VFLError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionError", "InputError", "NumericError", "ParseError",
           "ProtocolError", "StateError", "VFLError", "__version__"]
