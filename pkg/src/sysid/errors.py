"""Exception hierarchy shared by the library and the CLI."""


class SysIdError(Exception):
    """Base class for all library errors."""


class ConfigError(SysIdError, ValueError):
    """Invalid configuration, unknown preset or malformed request."""


class ParseError(ConfigError):
    """A file could not be parsed; the message carries the row/line."""


class SchemaError(ConfigError):
    """A file parsed but its columns or dimensions are wrong."""


class OrderingError(SysIdError, ValueError):
    """A pair (m, q) violates m < q."""


class IndexRangeError(SysIdError, IndexError):
    """A time index lies outside the trajectory."""


class HorizonError(SysIdError, ValueError):
    """The trajectory is too short for the requested data matrices."""


class NumericalError(SysIdError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 3)."""


class SimulationOverflowError(NumericalError):
    """A simulated state left the representable range."""

    def __init__(self, step: int, limit: float):
        self.step = step
        self.limit = limit
        super().__init__(
            f"state magnitude exceeded {limit:g} at step k={step}; "
            "the system is too unstable for this horizon"
        )


class DegenerateMomentError(NumericalError):
    """The second-moment matrix is not positive definite."""


class DomainError(NumericalError, ValueError):
    """An argument lies outside the domain of a bound formula."""


class DiagnosticUnavailableError(SysIdError):
    """A diagnostic needs recorded noise that the trajectory lacks."""


class BudgetError(SysIdError, ValueError):
    """Exhaustive search requested on a pool above the configured cap."""
