"""Error taxonomy shared across the package.

Every error carries a short machine-readable ``code`` so the CLI and the
service can report failures in a stable, parseable form.
"""


class CpdpError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidArgumentError(CpdpError):
    """A numeric or structural argument is out of its documented domain."""

    code = "invalid_argument"


class UnsupportedShapeError(CpdpError):
    """An array has a shape the operation does not support."""

    code = "unsupported_shape"


class DegenerateTruncationError(CpdpError):
    """Truncation interval carries no usable probability mass."""

    code = "degenerate_truncation"


class EmptyDatasetError(CpdpError):
    """No training rows survive preprocessing."""

    code = "empty_dataset"


class EmptyCloudError(CpdpError):
    """Every Monte Carlo sample was rejected by the scene."""

    code = "empty_cloud"

    def __init__(self, message: str, rejected_count: int = 0):
        super().__init__(message)
        self.rejected_count = rejected_count


class ParseError(CpdpError):
    """A data or definition file could not be parsed."""

    code = "parse_error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(CpdpError):
    """The run configuration is missing or inconsistent."""

    code = "config_error"
