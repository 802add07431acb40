"""Exception and warning types shared across the package."""


class GWError(Exception):
    """Base class for toolkit errors."""


class ForestStructureError(GWError, ValueError):
    """Invalid parent/children records (cycle, orphan, duplicate child, ...)."""


class TruncationError(GWError):
    """A tree outgrew the configured hard cap.

    ``partial`` holds whatever was built before the cap was hit (a forest
    object whose unexplored frontier vertices are left childless).
    """

    def __init__(self, message, partial=None, n_nodes=None):
        super().__init__(message)
        self.partial = partial
        self.n_nodes = n_nodes


class TruncationLeakError(GWError):
    """Probability mass escaped the retained type window; widen K."""


class IrreducibilityError(GWError, ValueError):
    pass


class LawSpecError(GWError, ValueError):
    pass


class SpineConstructionError(GWError):
    pass


class CriticalityWarning(UserWarning):
    """Dominant eigenvalue of the mean matrix is not 1 within tolerance."""
