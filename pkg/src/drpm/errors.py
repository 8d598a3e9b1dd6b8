"""Error types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class CapacityError(RuntimeError):
    """Raised when an enumeration would exceed its guard bound."""
