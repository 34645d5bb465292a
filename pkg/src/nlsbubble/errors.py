"""Exception hierarchy shared by all modules."""


class NLSBubbleError(Exception):
    """Base class for every error raised by the package."""


class NoConvergence(NLSBubbleError):
    pass


class SingularSystem(NLSBubbleError):
    pass


class SingularJacobian(NLSBubbleError):
    pass


class ShapeMismatch(NLSBubbleError):
    pass


class GridMismatch(ShapeMismatch):
    pass


class BoundaryMass(NLSBubbleError):
    """Too much mass sits near the edge of the periodic box."""


class ResolutionExceeded(NLSBubbleError):
    """A characteristic scale fell below the resolvable limit (8 grid spacings)."""


class NonFinite(NLSBubbleError):
    pass


class DriftExceeded(NLSBubbleError):
    pass


class NotBlowingUp(NLSBubbleError):
    pass


class ZeroField(NLSBubbleError):
    pass


class DegenerateCenters(NLSBubbleError):
    pass


class InsufficientSlices(NLSBubbleError):
    pass


class InsufficientSpan(NLSBubbleError):
    pass


class ConfigInvalid(NLSBubbleError):
    pass
