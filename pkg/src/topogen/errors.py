"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: BadInputError -> 2, ResourceCapError -> 3,
InvariantError -> 4.
"""


class TopogenError(Exception):
    pass


class BadInputError(TopogenError, ValueError):
    """Caller handed us something malformed (shape, range, missing file)."""


class ShapeError(BadInputError):
    """Tensor/array shape mismatch; message names both shapes."""


class ResourceCapError(TopogenError, RuntimeError):
    """A configurable resource guard tripped (e.g. simplex-count cap)."""


class InvariantError(TopogenError, RuntimeError):
    """Internal consistency violated; indicates a bug, not bad input."""
