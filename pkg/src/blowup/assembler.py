"""Approximate solutions built from projected bubbles, their energy and residual."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bubbles import Nonlinearity, bubble_eval, nonlinearity_eval, primitive_eval, project_bubble
from .errors import ConfigOutsideLambda, QuadratureUnrefined
from .geometry import Perforated
from .green import build_engine
from .quadrature import DEFAULT_BUDGET, interior_quadrature
from .reduced import all_deltas, concentration_points, delta_scaling

PROBLEM_OF = {"MBN": "BN", "MAC": "AC", "TAC": "AC", "TC": "C"}
CHUNK = 65536


def perforate(domain, center, radius):
    """``domain`` with the ball ``B(center, radius)`` removed (any previous hole dropped)."""
    base = domain.outer if isinstance(domain, Perforated) else domain
    return Perforated(base, np.asarray(center, dtype=float), float(radius))


class ApproximateSolution:
    """``V = sum_i lambda_i P U_{delta_i, z_i}`` for one regime, epsilon and configuration."""

    def __init__(self, regime, epsilon, config, bubbles, domain, engine):
        self.regime = regime
        self.epsilon = float(epsilon)
        self.config = config
        self.bubbles = bubbles
        self.domain = domain
        self.engine = engine
        self.lambdas = np.array(regime.lambdas, dtype=float)
        self.nonlinearity = Nonlinearity(PROBLEM_OF[regime.kind], self.epsilon, regime.n)

    @property
    def deltas(self):
        return np.array([b.params.delta for b in self.bubbles])

    @property
    def centers(self):
        return np.array([b.params.z for b in self.bubbles])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for lam, b in zip(self.lambdas, self.bubbles):
            out += lam * b.value(x)
        return out

    __call__ = value

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for lam, b in zip(self.lambdas, self.bubbles):
            out += lam * b.grad(x)
        return out

    def source(self, x):
        """``-Lap V`` in closed form: ``sum_i lambda_i U_i^p`` (corrections are harmonic)."""
        p = self.nonlinearity.p
        out = 0.0
        for lam, b in zip(self.lambdas, self.bubbles):
            out = out + lam * bubble_eval(b.params, x) ** p
        return out

    def to_dict(self):
        return {
            "regime": self.regime.to_dict(),
            "epsilon": self.epsilon,
            "config": self.config.to_dict(),
            "domain": self.domain.to_dict(),
            "bubbles": [b.to_dict() for b in self.bubbles],
        }


def assemble(engine, regime, epsilon, config, warn=True):
    """Build ``V`` for ``config`` at parameter ``epsilon``.

    For hole towers the engine may be for the unperforated domain; the
    domain with the hole of radius ``epsilon`` is built here, so tower
    centers may lie inside the removed ball.
    """
    deltas = all_deltas(regime, epsilon, config)
    centers = concentration_points(regime, epsilon, config)
    if regime.kind == "TC":
        dom = engine.domain
        if not (
            isinstance(dom, Perforated)
            and np.allclose(dom.hole_center, regime.hole_center)
            and np.isclose(dom.hole_radius, epsilon)
        ):
            engine = build_engine(perforate(dom, regime.hole_center, epsilon))
    elif np.any(engine.domain.boundary_distance(centers) <= 0):
        raise ConfigOutsideLambda("concentration point outside the domain")
    from .bubbles import BubbleParams

    bubbles = []
    for dl, z, lam in zip(deltas, centers, regime.lambdas):
        bubbles.append(project_bubble(engine, BubbleParams(float(dl), z, lam), warn=warn))
    return ApproximateSolution(regime, epsilon, config, bubbles, engine.domain, engine)


def solution_rule(sol, budget=DEFAULT_BUDGET, **kw):
    """Quadrature rule refined at every bubble center down to its rate."""
    return interior_quadrature(sol.domain, list(sol.centers), list(sol.deltas), budget=budget, **kw)


def _check_rule(sol, rule):
    cs = np.array(rule.refinement_centers, dtype=float).reshape(-1, sol.domain.n)
    ss = np.asarray(rule.refinement_scales, dtype=float)
    for z, dl in zip(sol.centers, sol.deltas):
        ok = False
        if len(cs):
            near = np.linalg.norm(cs - z, axis=1) <= 20 * np.maximum(ss, dl)
            ok = bool(np.any(near & (ss <= 10 * dl) & (ss >= dl / 10)))
        if not ok:
            warnings.warn(
                f"quadrature rule is not refined at scale {dl:.3e} near a bubble center",
                QuadratureUnrefined,
                stacklevel=3,
            )


def _integrate(rule, fn):
    # fixed chunk order keeps the sum reproducible
    total = 0.0
    for i in range(0, len(rule), CHUNK):
        sl = slice(i, i + CHUNK)
        total += float(np.sum(rule.weights[sl] * fn(rule.nodes[sl])))
    return total


def energy(sol, rule=None):
    """``J(V) = 1/2 int |grad V|^2 - int F(V)`` by quadrature."""
    if rule is None:
        rule = solution_rule(sol)
    else:
        _check_rule(sol, rule)
    nl = sol.nonlinearity

    def integrand(x):
        g = sol.grad(x)
        return 0.5 * np.sum(g * g, axis=-1) - primitive_eval(nl, sol.value(x))

    return _integrate(rule, integrand)


def residual_norm(sol, rule=None):
    """``L^{2n/(n+2)}`` norm of ``sum_i lambda_i U_i^p - f(V)``."""
    if rule is None:
        rule = solution_rule(sol)
    else:
        _check_rule(sol, rule)
    n = sol.regime.n
    q = 2 * n / (n + 2)
    nl = sol.nonlinearity

    def integrand(x):
        return np.abs(sol.source(x) - nonlinearity_eval(nl, sol.value(x))) ** q

    return _integrate(rule, integrand) ** (1 / q)


@dataclass
class ResidualReport:
    eps_values: list
    residual_norms: list
    slope: float
    intercept: float
    r2: float
    metadata: dict = field(default_factory=dict)

    @property
    def monotone(self):
        """Norms decrease along the (decreasing) epsilon values."""
        return bool(np.all(np.diff(self.residual_norms) < 0))

    def to_dict(self):
        return {
            "eps_values": list(map(float, self.eps_values)),
            "residual_norms": list(map(float, self.residual_norms)),
            "fitted_slope": self.slope,
            "intercept": self.intercept,
            "fit_r2": self.r2,
            "monotone": self.monotone,
            "metadata": self.metadata,
        }

    def rows(self):
        return [(e, r) for e, r in zip(self.eps_values, self.residual_norms)]


def fit_power_law(eps, values):
    """Least-squares ``log v = a + eta log|eps|``; returns ``(eta, a, r2)``."""
    x = np.log(np.abs(np.asarray(eps, dtype=float)))
    y = np.log(np.asarray(values, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    (eta, a), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ np.array([eta, a])) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(eta), float(a), r2


def residual_sweep(engine, regime, config, eps_list, budget=DEFAULT_BUDGET, warn=False):
    """Residual norms over ``eps_list`` and their fitted power law in ``|eps|``."""
    eps = np.asarray(eps_list, dtype=float)
    if len(eps) < 4:
        raise ValueError("a residual sweep needs at least 4 epsilon values")
    mags = np.abs(eps)
    if not np.all(np.diff(mags) < 0):
        raise ValueError("epsilon values must decrease strictly in magnitude")
    if np.log10(mags[0] / mags[-1]) < 1.5:
        raise ValueError("epsilon values must span at least 1.5 decades")
    for e in eps:
        delta_scaling(regime, e, config, 1)
    norms = []
    for e in eps:
        sol = assemble(engine, regime, e, config, warn=warn)
        norms.append(residual_norm(sol, solution_rule(sol, budget=budget)))
    slope, intercept, r2 = fit_power_law(eps, norms)
    meta = {"regime": regime.to_dict(), "config": config.to_dict(), "domain": engine.domain.to_dict()}
    return ResidualReport(list(eps), norms, slope, intercept, r2, meta)
