"""Exception and warning types."""


class BlowupError(Exception):
    """Base class for errors raised by this package."""


class GeometryError(BlowupError, ValueError):
    """Invalid domain description."""


class CollocationDivergence(BlowupError, RuntimeError):
    """Boundary collocation could not reach the requested tolerance."""


class CoincidentPoints(BlowupError, ValueError):
    """Green's function requested at (numerically) coincident points."""


class BudgetExceeded(BlowupError, RuntimeError):
    """A quadrature rule would need more nodes than allowed."""


class IncompatibleSign(BlowupError, ValueError):
    """The sign of epsilon does not match the regime."""


class ConfigOutsideLambda(BlowupError, ValueError):
    """A configuration is not in the admissible configuration space."""


class MaxIters(BlowupError, RuntimeError):
    """An iterative search ran out of iterations without converging."""


class NotCritical(BlowupError, ValueError):
    """Classification requested at a point whose gradient is not small."""


class ConfigError(BlowupError, ValueError):
    """Invalid run configuration (CLI)."""


class SingularHessian(UserWarning):
    """Newton iteration met a (nearly) singular Hessian."""


class QuadratureUnrefined(UserWarning):
    """A quadrature rule is not refined at the scales of the integrand."""


class ProjectionWarning(UserWarning):
    """A bubble is too close to the boundary for an accurate projection."""
