"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input data or parameters violate a documented precondition."""


class ConfigurationError(ValueError):
    """Solver settings are mutually inconsistent."""


class RangeError(ValueError):
    """A value lies outside the range of an operator being inverted."""
