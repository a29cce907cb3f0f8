"""Exception types shared across the package."""


class NumericalInstabilityError(ArithmeticError):
    """A numerical primitive produced a non-finite value."""


class ParseError(ValueError):
    """A text description contains a clause the grammar cannot parse."""


class FeasibilityError(ValueError):
    """The requested series features cannot be realized together."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


class DataError(ValueError):
    """Missing or malformed dataset files."""
