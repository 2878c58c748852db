"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/parse problems exit 2,
geometry/numerical failures exit 3.
"""


class SddkError(Exception):
    """Base class for all package errors."""


class ValidationError(SddkError):
    """Bad arguments, dimension mismatches, malformed configs or files."""


class ParseError(ValidationError):
    """File parse failure; carries the offending line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}: "
        super().__init__(f"{loc}{message}" if loc else message)


class GeometryError(SddkError):
    """Degenerate or inconsistent geometry discovered during computation."""


class NumericalError(SddkError):
    """Non-finite values or numerically degenerate inputs."""
