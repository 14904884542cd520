"""Exception types shared across the package."""


class KatbenchError(Exception):
    """Base class for all package errors."""


class ParseError(KatbenchError, ValueError):
    """Malformed LIBSVM input. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ConfigError(KatbenchError, ValueError):
    """Invalid solver or experiment configuration."""


class DivergenceError(KatbenchError, FloatingPointError):
    """A solver produced a non-finite iterate."""

    def __init__(self, message, epoch=None, iteration=None, stage=None):
        self.epoch = epoch
        self.iteration = iteration
        self.stage = stage
        super().__init__(message)

    def at_stage(self, stage):
        """Return a copy of this error tagged with an outer stage index."""
        return DivergenceError(
            f"stage {stage}: {self.args[0]}",
            epoch=self.epoch,
            iteration=self.iteration,
            stage=stage,
        )


class TraceOrderError(KatbenchError, ValueError):
    """Trace points for one solver must have increasing gradient counts."""
