"""Exception hierarchy shared by every module.

The CLI maps :class:`ValidationError` subclasses to exit code 1 and every
other :class:`PanomodError` to exit code 2.
"""


class PanomodError(Exception):
    """Base class for all package errors."""


class ValidationError(PanomodError):
    """Bad user input: configs, flags, shapes handed in from outside."""


class DimensionError(ValidationError):
    """Operand shapes are incompatible."""


class DomainError(ValidationError):
    """A value lies outside the mathematical domain of an operation."""


class GeometryError(ValidationError):
    """Projection geometry is inconsistent (e.g. ERP width != 2 * height)."""


class ConfigError(ValidationError):
    """A config field violates its invariant. ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(ValidationError):
    """Malformed file content. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ContractError(PanomodError):
    """API misuse, e.g. calling backward on a non-scalar node."""


class TrainingError(PanomodError):
    """Numerical failure during optimisation (non-finite loss or gradient)."""
