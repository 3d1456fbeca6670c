"""Exception taxonomy shared across the package.

The CLI maps these onto its stable exit codes: configuration/validation
problems exit 2, I/O problems exit 3 (plain OSError), numeric failures
exit 4, pipeline failures exit 5.
"""


class RantwinError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(RantwinError):
    """Invalid configuration value or malformed config/schedule file."""


class DomainError(RantwinError):
    """Operation called with inputs outside its domain."""


class DataFormatError(RantwinError):
    """Malformed artifact file (dataset CSV, stats CSV, model file)."""


class NumericError(RantwinError):
    """Non-finite value produced where a finite one is required."""


class TrainingError(NumericError):
    """Training diverged or failed to reduce the loss."""


class ProtocolError(RantwinError):
    """Message-bus ordering contract violated."""


class PipelineError(RantwinError):
    """A multi-stage run failed for a non-configuration reason."""
