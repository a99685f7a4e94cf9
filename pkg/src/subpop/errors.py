"""Exception types shared across the toolkit.

Each class maps to one failure category so callers (and the CLI) can
distinguish bad files from bad math from bad usage.
"""


class SubpopError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SubpopError, ValueError):
    """An invariant on constructed data would be violated (NaN/Inf, bad range)."""


class FormatError(SubpopError, ValueError):
    """A binary file has the wrong magic, version, or dtype tag."""


class LengthError(SubpopError, ValueError):
    """A file's declared element count disagrees with its actual payload size."""


class ParseError(SubpopError, ValueError):
    """A text field could not be parsed (e.g. non-integer in a metadata CSV)."""


class ConsistencyError(SubpopError, ValueError):
    """Structurally valid input that contradicts itself (duplicate/missing index)."""


class ShapeError(SubpopError, ValueError):
    """Array dimensions do not match what the operation requires."""


class ContractError(SubpopError, RuntimeError):
    """An API was called out of order or with stale state (e.g. a reused cache)."""


class NumericalError(SubpopError, ArithmeticError):
    """A numerical routine diverged or produced non-finite values."""


class DomainError(SubpopError, ValueError):
    """An input is outside a function's mathematical domain (e.g. zero-norm vector)."""
