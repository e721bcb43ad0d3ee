"""Exception hierarchy shared by all modules."""


class OdcSimError(Exception):
    """Base class for every error raised by odcsim."""


class ParameterError(OdcSimError, ValueError):
    """Invalid numeric parameter or argument combination."""


class FormatError(OdcSimError, ValueError):
    """Malformed input data (e.g. a length file)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InfeasibleError(OdcSimError, ValueError):
    """A sample can never be scheduled under the memory budget."""

    def __init__(self, message: str, sample_id: int | None = None):
        self.sample_id = sample_id
        super().__init__(message)


class SizeError(ParameterError):
    """Input too large for exhaustive enumeration."""


class ModeError(OdcSimError, ValueError):
    """Batching solution mode incompatible with the synchronization scheme."""


class DegenerateInputError(OdcSimError, ValueError):
    """Quantity undefined for the given input (e.g. zero total time)."""


class ConfigError(OdcSimError, ValueError):
    """Experiment configuration violation; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class StateError(OdcSimError, RuntimeError):
    """Operation on an uninitialized or finalized protocol object."""


class ProtocolError(OdcSimError, RuntimeError):
    """Violation of the gather / scatter-accumulate message protocol."""


class DeadlockError(ProtocolError):
    """No actor can make progress while work remains."""


class InvariantViolation(OdcSimError, AssertionError):
    """Internal consistency check failed."""
