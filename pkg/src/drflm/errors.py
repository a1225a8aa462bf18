"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedSizeError(InvalidInputError):
    """The problem is too large for an exhaustive routine."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to settle."""


class DivergenceError(NumericalError):
    pass


class ConfigError(ValueError):
    """An experiment configuration is malformed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
