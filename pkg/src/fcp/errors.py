"""Exception types shared across the toolkit."""


class FcpError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(FcpError):
    """Arguments violate a documented precondition."""


class DegenerateField(FcpError):
    """A field that carries no usable signal (e.g. all-zero normals)."""


class EmptySurface(FcpError):
    """The requested level set does not exist in the grid."""


class ShapeRejected(FcpError):
    """A corpus shape failed reconstruction quality checks."""


class TruncatedFile(FcpError):
    """A binary file ended before its declared payload."""


class StateError(FcpError):
    """An operation was called out of order (e.g. backward before forward)."""


class IngestError(FcpError):
    """An observation could not be turned into a signed-distance oracle."""
