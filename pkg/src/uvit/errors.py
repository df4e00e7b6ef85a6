"""Exception types shared across the package.

Everything derives from UViTError (itself a ValueError) so callers can catch
one base type. The CLI maps any UViTError to exit code 2.
"""


class UViTError(ValueError):
    """Base class for contract violations raised by this package."""


class DimensionError(UViTError):
    """Operand dimensions are missing, mismatched, or out of range."""


class NumericError(UViTError):
    """Non-finite values where finite ones are required."""


class ContractError(UViTError):
    """A call broke an operation's stated precondition."""


class ParseError(UViTError):
    """Malformed window-strategy text. Carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"at position {position}: {message}")
        self.position = position


class DivisibilityError(UViTError):
    """A window scale does not tile the token grid exactly."""


class BindingError(UViTError):
    """A window strategy cannot be bound to a given depth and grid."""


class ConfigError(UViTError):
    """An architecture configuration is internally inconsistent."""
