"""Exception types shared by the simulator modules and the CLI exit codes they map to."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


class SimulatorError(Exception):
    """Base class for every error raised on purpose by wfmsim."""


class DomainError(SimulatorError, ValueError):
    """Input outside the domain of a closed-form model (log of a non-positive value, d = 0, ...)."""


class PayloadError(SimulatorError, ValueError):
    """Malformed input to a codec or to the PHY (wrong length, bad bit count, wrong shape)."""


class ConfigError(SimulatorError, ValueError):
    """Experiment configuration that does not parse or does not validate."""


class InvariantViolation(SimulatorError, RuntimeError):
    """A runtime check on a session, a trace or a table failed."""
