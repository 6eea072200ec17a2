"""Exception hierarchy shared by every stage of the pipeline."""


class OctokError(Exception):
    """Base class for all library errors."""


class PreconditionError(OctokError, ValueError):
    """An argument violates a documented precondition."""


class EmptyInputError(PreconditionError):
    """Mesh, point cloud or point set has no elements."""


class DegenerateGeometryError(OctokError, ValueError):
    """Geometry has zero extent or zero area."""


class FormatError(OctokError):
    """A file could not be parsed."""


class MalformedStreamError(FormatError):
    """A BFS child-mask stream is too short or too long."""

    def __init__(self, message, index):
        super().__init__(f"{message} (byte {index})")
        self.index = index


class DepthViolationError(FormatError):
    """A node at the maximum depth declares children."""


class CompatibilityError(OctokError):
    """Token stream and codebook do not belong together."""


class CapExceededError(OctokError):
    """Token sequence is longer than the configured cap."""


class TrainingError(OctokError):
    """Codebook fitting cannot proceed."""


class DecodeError(OctokError):
    """No usable leaves to decode occupancy from."""


class EmptySurfaceError(OctokError):
    """Occupancy grid is uniform, so no isosurface exists."""
