"""Exception taxonomy and process exit codes.

Library code raises subclasses of DiffcastError; the command-line layer maps
them onto a small fixed set of exit codes so callers can script against
failures without parsing prose.
"""

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4


class DiffcastError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DiffcastError):
    """Invalid configuration: bad bounds, unknown keys, unsatisfiable splits."""


class DataError(DiffcastError):
    """Problem with user-supplied data: gaps, ragged records, bad cells."""


class NumericError(DiffcastError):
    """A computation produced a non-finite value."""


class ContractError(DiffcastError):
    """An operation was invoked in a way its contract forbids."""


class GraphError(ContractError):
    """Backward was requested from a tensor that is not on an active graph."""


class DimensionError(ContractError):
    """Operand shapes are incompatible with the requested operation."""


class CheckpointError(DataError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ends before all declared records were read."""


class CheckpointShapeError(CheckpointError):
    """Stored parameter shapes disagree with the configuration echo."""


class ConfigurationWarning(UserWarning):
    """Legal but suspicious configuration, e.g. a kernel that wraps past the
    full circular axis."""
