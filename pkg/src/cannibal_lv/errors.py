"""Exception hierarchy shared by every module of the package."""


class CannibalLVError(Exception):
    """Base class for all package errors."""


class DomainError(CannibalLVError, ValueError):
    """An argument lies outside the domain of a formula."""


class InputError(CannibalLVError, ValueError):
    """Malformed, misaligned or insufficient input data."""


class ParseError(InputError):
    """A data file could not be parsed; carries the offending line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(f"{where}{message}")


class IntegrationDivergedError(CannibalLVError, ArithmeticError):
    """The ODE state became non-finite during integration."""

    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"integration diverged at step {step} (t = {time:.4f})")


class ComparisonInvalidError(CannibalLVError, ValueError):
    """Two fits cannot be compared as nested models."""


class NumericFailure(CannibalLVError, ArithmeticError):
    """A numerical stage failed in a way the caller cannot fix by editing input."""
