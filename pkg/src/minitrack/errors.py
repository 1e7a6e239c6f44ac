"""Exception types shared across the package."""


class MinitrackError(Exception):
    """Base class for all package errors."""


class DimensionError(MinitrackError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(MinitrackError):
    """A kernel produced or received non-finite values."""


class GeometryError(MinitrackError):
    """Image/feature geometry is inconsistent (bad crop, patch too small, ...)."""


class AnnotationError(MinitrackError):
    """A ground-truth annotation is unusable (degenerate or out of frame)."""


class SamplingError(MinitrackError):
    """The sample-drawing attempt budget was exhausted."""


class IngestionError(MinitrackError):
    """A sequence directory or ground-truth file could not be parsed."""


class SynthSpecError(MinitrackError):
    """A synthetic-sequence script is infeasible (e.g. object leaves the frame)."""
