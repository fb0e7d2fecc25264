"""Exception hierarchy.

Numerical failures (kernel violation, history underflow, step-size misuse)
share a base class so the CLI can map them to a single exit code.
"""


class HKDelayError(Exception):
    """Base class for every error raised by the package."""


class DomainError(HKDelayError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class NumericalError(HKDelayError):
    """The integration or a quadrature cannot proceed."""


class KernelViolationError(NumericalError):
    """The delay kernel has no mass on the active window (h(t) <= 0)."""


class LookupRangeError(NumericalError, ValueError):
    """A trajectory query falls outside the recorded time range."""


class HistoryUnderflowError(LookupRangeError):
    """A delayed lookup reaches before the start of the initial history."""


class StepSizeError(NumericalError, ValueError):
    """The integrator configuration violates its invariants."""


class CertificateViolationError(HKDelayError):
    """A sufficient condition required by a controller does not hold."""


class ControllerTimeoutError(HKDelayError):
    """A controller phase exceeded its maximum allowed duration."""


class ConfigError(HKDelayError, ValueError):
    """A scenario configuration is malformed.

    ``field`` names the offending entry using dotted notation.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
