"""Exception types shared by the CLI and the library code.

The CLI maps each family to its exit status (see ``main.main``).
"""


class TinyAttnError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(TinyAttnError, ValueError):
    """Malformed or inconsistent run configuration."""


class NumericError(TinyAttnError, ArithmeticError):
    """A loss or gradient stopped being finite."""

    def __init__(self, message: str, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            details = ', '.join(f'{k}={v}' for k, v in diagnostics.items())
            message = f'{message} ({details})'
        super().__init__(message)


class CheckpointError(TinyAttnError, OSError):
    """Unreadable, truncated or incompatible checkpoint file."""
