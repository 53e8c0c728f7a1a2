"""Exception hierarchy shared by all tailforge modules.

Each class maps to one CLI exit code so library errors translate into a
stable scripting contract (see ``tailforge.cli``).
"""


class TailforgeError(Exception):
    """Base class for all tailforge errors."""

    exit_code = 1


class ValidationError(TailforgeError):
    """Bad inputs: parameters, configs, or preconditions. Exit code 2."""

    exit_code = 2


class GeneratorValidationError(ValidationError):
    """A tail generator failed its structural checks.

    Carries the full ValidationReport so callers can list the violations.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DomainError(TailforgeError):
    """Evaluation requested outside the representable domain. Exit code 3."""

    exit_code = 3


class CalibrationError(TailforgeError):
    """No admissible constant exists up to the configured cap. Exit code 4."""

    exit_code = 4


class ResourceCapError(TailforgeError):
    """A hard enumeration or memory cap would be exceeded. Exit code 6."""

    exit_code = 6
