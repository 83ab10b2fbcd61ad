"""Standard bubbles, their linearised kernels and projections onto H^1_0."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CollocationDivergence, GeometryError, ProjectionWarning
from .geometry import MAX_DIM, Ball, Perforated
from .green import ImageEngine, constant_field, harmonic_from_dict, point_field

# a projection is refitted as an error beyond this relative boundary mismatch
PROJECTION_TOL = 1e-6


def critical_exponent(n):
    return (n + 2) / (n - 2)


def bubble_constant(n):
    """Normalisation making U a solution of -Lap U = U^p."""
    return (n * (n - 2)) ** ((n - 2) / 4)


@dataclass(frozen=True)
class BubbleParams:
    """Bubble centered at ``z`` with concentration rate ``delta``.

    ``lam`` is an amplitude sign, +1 or -1, used by sign-changing ansatz.
    """

    delta: float
    z: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if not 3 <= len(z) <= MAX_DIM:
            raise GeometryError(f"dimension {len(z)} outside 3..{MAX_DIM}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise GeometryError("delta must be positive")
        if self.lam not in (1, -1):
            raise ValueError("lam must be +1 or -1")

    @property
    def n(self):
        return len(self.z)

    def to_dict(self):
        return {"delta": float(self.delta), "z": self.z.tolist(), "lam": float(self.lam)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["delta"]), d["z"], float(d.get("lam", 1.0)))


def _split(params, x):
    x = np.asarray(x, dtype=float)
    d = x - params.z
    r2 = np.sum(d * d, axis=-1)
    return d, params.delta**2 + r2


def bubble_eval(params, x):
    """U_{delta,z}(x), vectorised over the leading axes of ``x``."""
    n = params.n
    _, s = _split(params, x)
    return bubble_constant(n) * params.delta ** ((n - 2) / 2) * s ** (-(n - 2) / 2)


def bubble_grad(params, x):
    n = params.n
    d, s = _split(params, x)
    a = bubble_constant(n) * (n - 2) * params.delta ** ((n - 2) / 2)
    return -a * d * (s ** (-n / 2))[..., None]


def kernel_eval(params, j, x):
    """Kernel element ``psi^j``: j=0 is d/d delta, j=1..n are d/d z_j."""
    n = params.n
    d, s = _split(params, x)
    an = bubble_constant(n)
    dl = params.delta
    if j == 0:
        r2 = s - dl * dl
        return an * (n - 2) / 2 * dl ** ((n - 4) / 2) * (r2 - dl * dl) * s ** (-n / 2)
    if 1 <= j <= n:
        return an * (n - 2) * dl ** ((n - 2) / 2) * d[..., j - 1] * s ** (-n / 2)
    raise ValueError(f"kernel index {j} outside 0..{n}")


def _laplacian_fd(f, x, h):
    n = x.shape[-1]
    f0 = f(x)
    lap = -2.0 * n * f0
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        lap = lap + f(x + e) + f(x - e)
    return lap / (h * h)


def kernel_residual(params, sample, j=None, func=None):
    """Relative residual of ``-Lap psi - p U^(p-1) psi`` on ``sample``.

    The Laplacian is a central difference with step ``1e-3 * delta``. The
    result is ``max |residual| / max |p U^(p-1) psi|``, maximised over the
    kernel indices ``j`` (all of them by default). ``func`` replaces the
    kernel element by an arbitrary function of the points.
    """
    x = np.atleast_2d(np.asarray(sample, dtype=float))
    n = params.n
    if np.any(np.linalg.norm(x - params.z, axis=1) < 1e-3 * params.delta):
        raise GeometryError("sample points must stay 1e-3*delta away from the center")
    p = critical_exponent(n)
    h = 1e-3 * params.delta
    pot = p * bubble_eval(params, x) ** (p - 1)
    if func is not None:
        cases = [func]
    else:
        idx = range(n + 1) if j is None else [j]
        cases = [lambda y, k=k: kernel_eval(params, k, y) for k in idx]
    worst = 0.0
    for f in cases:
        rhs = pot * f(x)
        res = -_laplacian_fd(f, x, h) - rhs
        worst = max(worst, float(np.max(np.abs(res)) / max(np.max(np.abs(rhs)), 1e-300)))
    return worst


class ProjectedBubble:
    """``PU = U - h`` where ``h`` is harmonic with ``h = U`` on the boundary."""

    def __init__(self, params, correction, engine_scheme):
        self.params = params
        self.correction = correction
        self.engine_scheme = engine_scheme

    @property
    def boundary_residual(self):
        return self.correction.boundary_residual

    def value(self, x):
        return bubble_eval(self.params, x) - self.correction.value(x)

    def grad(self, x):
        return bubble_grad(self.params, x) - self.correction.grad(x)

    __call__ = value

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "scheme": self.engine_scheme,
            "correction": self.correction.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(BubbleParams.from_dict(d["params"]), harmonic_from_dict(d["correction"]), d["scheme"])


def _ball_image(ball, params):
    # U on |x - c| = R matches a single exterior point charge along the ray through z
    n = params.n
    m = (n - 2) / 2
    R = ball.radius
    zt = params.z - ball.center
    a = float(np.linalg.norm(zt))
    lead = bubble_constant(n) * params.delta**m
    if a < 1e-14 * R:
        return constant_field(lead * (params.delta**2 + R * R) ** (-m), n)
    K = (params.delta**2 + R * R + a * a) / a
    q = 0.5 * (K + np.sqrt(K * K - 4 * R * R))
    w = ball.center + q * zt / a
    return point_field(w[None], [lead * (q / a) ** m], n)


def _near_boundary(domain, z, delta):
    dom = domain
    if isinstance(dom, Perforated):
        dh = np.linalg.norm(z - dom.hole_center) - dom.hole_radius
        # a hole much smaller than delta leaves smooth data on its sphere
        if dom.hole_radius > delta and dh < 10 * delta:
            return True
        dom = dom.outer
    return float(dom.boundary_distance(z[None])[0]) < 10 * delta


def project_bubble(engine, params, warn=True):
    """Project ``U_{delta,z}`` onto H^1_0 of the engine's domain.

    On a ball the harmonic correction is a single image charge. Elsewhere it
    comes from the engine's collocation; the axis hint keeps ring engines
    exact for data symmetric about the line through ``z``.
    """
    if params.n != engine.n:
        raise GeometryError("bubble and domain dimensions differ")
    if warn and _near_boundary(engine.domain, params.z, params.delta):
        warnings.warn(
            "bubble center within 10*delta of the boundary; projection may be inaccurate",
            ProjectionWarning,
            stacklevel=2,
        )
    if isinstance(engine, ImageEngine):
        corr = _ball_image(engine.domain, params)
    else:
        corr = engine.extend(lambda X: bubble_eval(params, X), axis_point=params.z, scale=params.delta)
        if corr.boundary_residual > max(PROJECTION_TOL, engine.tol):
            raise CollocationDivergence(
                f"projection boundary residual {corr.boundary_residual:.2e} exceeds tolerance"
            )
    return ProjectedBubble(params, corr, engine.scheme)


# Nonlinearities ----------------------------------------------------------

PROBLEMS = ("BN", "AC", "C")


@dataclass(frozen=True)
class Nonlinearity:
    """Right-hand side ``f(u)`` of ``-Lap u = f(u)``.

    BN: ``|u|^(p-1) u + eps u`` (linear perturbation),
    AC: ``|u|^(p-1-eps) u`` (slightly subcritical),
    C:  ``|u|^(p-1) u`` on a domain with a small hole.
    """

    problem: str
    epsilon: float
    n: int

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        if not 3 <= self.n <= MAX_DIM:
            raise GeometryError(f"dimension {self.n} outside 3..{MAX_DIM}")

    @property
    def p(self):
        return critical_exponent(self.n)

    @property
    def exponent(self):
        """Exponent q in ``|u|^(q-1) u``."""
        return self.p - self.epsilon if self.problem == "AC" else self.p

    @property
    def s_eps(self):
        """Lebesgue exponent matched to the subcritical Sobolev embedding."""
        return 2 * self.n / (self.n - 2) - self.epsilon * self.n / 2


def nonlinearity_eval(nl, u):
    u = np.asarray(u, dtype=float)
    q = nl.exponent
    out = np.abs(u) ** (q - 1) * u
    if nl.problem == "BN":
        out = out + nl.epsilon * u
    return out


def primitive_eval(nl, u):
    """F with F' = f and F(0) = 0."""
    u = np.asarray(u, dtype=float)
    q = nl.exponent
    out = np.abs(u) ** (q + 1) / (q + 1)
    if nl.problem == "BN":
        out = out + 0.5 * nl.epsilon * u * u
    return out
