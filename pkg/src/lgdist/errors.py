"""Exception types shared across the package.

Every error the CLI can surface derives from LgdistError so the dispatcher can
emit a machine-readable record without blanket except clauses.
"""


class LgdistError(Exception):
    """Base class for all package errors."""


class CoordinateParityError(LgdistError):
    """Visium array coordinate with odd (row + col) parity."""


class DatasetFormatError(LgdistError):
    """On-disk dataset violates the documented directory format."""


class DegenerateInputError(LgdistError):
    """Statistic undefined for this input (e.g. zero variance)."""


class PanelPoolError(LgdistError):
    """Too few usable genes to build the requested panel."""


class ShapeError(LgdistError):
    """Array arguments do not conform to the declared shapes."""


class NonFiniteError(LgdistError):
    """A non-finite value appeared where finiteness is required."""


class CheckpointError(LgdistError):
    """Checkpoint missing, malformed, or incompatible with the requested use."""


class ConfigError(LgdistError):
    """Configuration value outside its allowed range."""


class TargetError(LgdistError):
    """Completion target entry out of bounds or not in the gene panel."""
