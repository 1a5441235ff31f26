"""
Exceptions raised across the package.

Every error derives from ScenaFuseError so the command line can turn any of
them into a clean exit code.
"""


class ScenaFuseError(Exception):
    """Root of every error raised by scenafuse"""


class DimensionError(ScenaFuseError, ValueError):
    """A shape, axis or index does not fit the operation"""


class FormatError(ScenaFuseError, ValueError):
    """
    A file (binary container, JSONL record, key=value config) could not be parsed

    :param message: What went wrong
    :param line: 1-based line number for text formats, None for binary ones
    """
    def __init__(self, message : str, line : int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigurationError(ScenaFuseError, ValueError):
    """Invalid flags, hyperparameters or generator targets"""


class DivergenceError(ScenaFuseError, RuntimeError):
    """The training loss stopped being finite"""
