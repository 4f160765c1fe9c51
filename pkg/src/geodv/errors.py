"""Exception types shared across the geodv package."""


class GeodvError(Exception):
    """Base class for all geodv-specific errors."""


class SingularPositionError(GeodvError):
    """Position vector at (or numerically at) the gravitational singularity."""


class NonEllipticOrbitError(GeodvError):
    """Operation requires a bound (E < 0) orbit."""


class PropagationError(GeodvError):
    """The adaptive integrator failed to meet its tolerance."""


class HillRegionError(GeodvError):
    """Conformal factor 2(E - V) is non-positive: the point is outside the
    region where the metric (and any motion at this energy) exists."""

    def __init__(self, message, point=None, phi=None):
        super().__init__(message)
        self.point = point
        self.phi = phi


class InfeasibleSmaError(GeodvError):
    """Requested transfer semi-major axis below the two-point minimum."""


class DegeneratePlaneError(GeodvError):
    """Endpoints and the attracting center are collinear; the transfer plane
    is undefined (0 or 180 degree geometry)."""


class PointNotOnEllipseError(GeodvError):
    """Queried point does not satisfy the conic equation of the transfer."""


class TangentDegeneracyError(GeodvError):
    """Curve endpoint tangent too short to define a velocity direction."""


class EmptyResultError(GeodvError):
    """No feasible transfer candidate was found for the sampled set."""


class ScenarioFormatError(GeodvError):
    """Scenario or report file failed to parse or validate."""
