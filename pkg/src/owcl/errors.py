"""Exception types shared across the package."""


class OwclError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(OwclError, ValueError):
    pass


class DomainError(OwclError, ValueError):
    pass


class InputError(OwclError, ValueError):
    pass


class StateError(OwclError, RuntimeError):
    pass


class NumericError(OwclError, ArithmeticError):
    pass


class SpecError(OwclError, ValueError):
    """A generator spec or task split request that cannot be satisfied."""


class ParseError(OwclError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(OwclError, ValueError):
    pass


class ConfigError(OwclError, ValueError):
    """Raised with every problem found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
