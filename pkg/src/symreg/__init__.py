"""Multi-objective genetic-programming symbolic regression.

The package evolves expression trees against a vector of objectives using
non-dominated sorting, optionally fitting symbolic constants per candidate,
and can hand evaluation off to a remote experiment server over a
newline-delimited JSON protocol.
"""

from .errors import (
    CacheError,
    CheckpointError,
    ConstOptError,
    EvaluationError,
    ParseError,
    PrimitiveSetError,
    ProtocolError,
    SymregError,
    TransportError,
)

__all__ = [
    "CacheError",
    "CheckpointError",
    "ConstOptError",
    "EvaluationError",
    "ParseError",
    "PrimitiveSetError",
    "ProtocolError",
    "SymregError",
    "TransportError",
]

__version__ = "0.1.0"
