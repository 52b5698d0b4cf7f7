"""Exception types shared across the package.

The CLI maps these onto stable exit codes: format/validation/signal problems
exit 2, I/O problems exit 3, usage problems exit 1.
"""

from __future__ import annotations


class AffectLoopError(Exception):
    """Base class for every error raised deliberately by this package."""


class FormatError(AffectLoopError):
    """Malformed serialized text (session, catalog, template, baseline, config).

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ValidationError(AffectLoopError):
    """Structurally well-formed data that violates a documented invariant."""


class ConfigError(AffectLoopError):
    """A parameter or configuration value outside its documented domain."""


class SignalError(AffectLoopError):
    """Signal content unusable for the requested operation."""


class AmbiguousAlignmentError(SignalError):
    """Cross-correlation peak too weak to trust a clock-offset estimate."""


class CoverageError(SignalError):
    """Windows or series do not cover the interval an operation requires."""


class DenseSessionError(SignalError):
    """No event-free time remains for drawing null statistics."""
