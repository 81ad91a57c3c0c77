"""Exception hierarchy shared across the package."""


class SymregError(Exception):
    """Base class for all package-specific errors."""


class PrimitiveSetError(SymregError):
    """Invalid primitive-set definition (duplicate names, bad arity, ...)."""


class ParseError(SymregError):
    """A prefix-notation string could not be parsed against a primitive set."""


class EvaluationError(SymregError):
    """An expression references a symbol with no binding or no implementation."""


class ConstOptError(SymregError):
    """Constant optimization could not be set up for a problem."""


class CacheError(SymregError):
    """A persistent fitness-cache file is corrupt or unreadable."""


class ProtocolError(SymregError):
    """Wire-protocol violation: bad frame, bad message, or contract breach."""


class TransportError(ProtocolError):
    """The underlying connection failed (timeout, reset, mid-frame close)."""


class CheckpointError(SymregError):
    """A checkpoint file cannot be used to resume the requested run."""
