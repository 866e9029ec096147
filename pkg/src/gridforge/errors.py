"""Exception types shared across the library.

Each error maps to one failure mode named in the module contracts; none
of them are ever used for control flow.
"""

from __future__ import annotations

__all__ = [
    "GridforgeError",
    "UnknownGridError",
    "DegenerateGridError",
    "EncodingError",
    "InputError",
    "CorruptBlockError",
    "DegenerateBlockError",
    "InsufficientDataError",
    "ResidualEmptyError",
    "ShapeError",
    "ParameterError",
    "SnapCollapseWarning",
]


class GridforgeError(Exception):
    """Base class for all library errors."""


class UnknownGridError(GridforgeError, NameError):
    """Requested built-in grid name does not exist."""


class DegenerateGridError(GridforgeError):
    """A grid operation produced fewer than 2 distinct levels."""


class EncodingError(GridforgeError):
    """Value cannot be encoded in the target format (e.g. NaN where the
    format has no NaN representation)."""


class InputError(GridforgeError):
    """Invalid numeric input (NaN/Inf) in user-supplied data."""


class CorruptBlockError(GridforgeError):
    """Quantized block is internally inconsistent (bad selector or code)."""


class DegenerateBlockError(GridforgeError):
    """Operation undefined on an all-zero block."""


class InsufficientDataError(GridforgeError):
    """Training pool has too few distinct values for the requested fit."""


class ResidualEmptyError(GridforgeError):
    """Residual pool selection produced no blocks."""


class ShapeError(GridforgeError):
    """Matrix operands do not conform."""


class ParameterError(GridforgeError):
    """Invalid experiment or distribution parameter."""


class SnapCollapseWarning(UserWarning):
    """Snapping collapsed duplicate grid levels; capacity was reduced."""
