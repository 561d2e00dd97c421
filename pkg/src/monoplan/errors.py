"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by monoplan."""


# camera geometry
class GeometryError(PipelineError):
    pass


class DegenerateBaseline(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class NonFinite(GeometryError):
    pass


class DomainError(PipelineError, ValueError):
    pass


# matching
class MatchingError(PipelineError):
    pass


class EmptySearchRegion(MatchingError):
    pass


class PatchOutOfBounds(MatchingError):
    pass


class ZeroNormPatch(MatchingError):
    pass


# depth
class DepthError(PipelineError):
    pass


class NoAnchors(DepthError):
    pass


class AnchorDisparityTooSmall(DepthError):
    pass


class InsufficientMatches(DepthError):
    pass


# scene / io
class SceneParseError(PipelineError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientVisibleSurface(PipelineError):
    pass


class MapFormatError(PipelineError):
    pass


# planning
class PlanningError(PipelineError):
    pass


class GoalInObstacle(PlanningError):
    pass


class NoFreeCell(PlanningError):
    pass


class StuckAtLocalPlateau(PlanningError):
    pass


class PlanningFailed(PlanningError):
    pass
