"""Exception hierarchy; the CLI maps these onto exit codes."""


class UsageError(ValueError):
    """Bad arguments, mismatched shapes or an invalid configuration."""


class ConfigError(UsageError):
    """Invalid experiment or sweep configuration."""


class NumericalError(ArithmeticError):
    """A density or loss evaluated to a non-finite value."""

    def __init__(self, message, dyad_index=None):
        super().__init__(message)
        self.dyad_index = dyad_index


class SamplingError(RuntimeError):
    """The sampler could not be initialized or run."""
