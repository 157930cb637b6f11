"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``FormatError`` -> 2, ``ContractError``
(and its ``DimensionError`` subclass) -> 3.
"""


class AvjcaError(Exception):
    """Base class for all package errors."""


class ContractError(AvjcaError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes do not conform."""


class FormatError(AvjcaError, ValueError):
    """A file or text input does not follow its declared format."""
