"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so ``spliceguard`` commands
can translate failures without a lookup table.
"""


class SpliceGuardError(Exception):
    exit_code = 3


class ConfigError(SpliceGuardError, ValueError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class ArgumentError(SpliceGuardError, ValueError):
    """A function was called with arguments outside its domain."""

    exit_code = 1


class FormatError(SpliceGuardError, ValueError):
    """A file is malformed or does not match the expected layout."""

    exit_code = 2


class UnsupportedFormatError(FormatError):
    """A well-formed file uses an encoding this package does not read."""


class ShapeError(SpliceGuardError, ValueError):
    """Array shapes do not line up."""

    exit_code = 2


class AnnotationMismatchError(SpliceGuardError, ValueError):
    """Splice annotation does not fit the feature frame grid."""

    exit_code = 2


class InvariantError(SpliceGuardError, RuntimeError):
    """An internal invariant was violated."""

    exit_code = 3
