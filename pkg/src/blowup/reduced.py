"""Configuration regimes, concentration-rate scalings and reduced energies.

Coordinates of a configuration are packed into one vector:

* MBN, MAC: ``z_1 .. z_k`` (k*n entries) then ``l_1 .. l_k``
* TAC: ``sigma_1 .. sigma_{k-1}``, base point ``z``, then ``l_1 .. l_k``
* TC: ``sigma_1 .. sigma_k`` then ``l_1 .. l_k``

with ``l_i = ln d_i``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoints, ConfigOutsideLambda, GeometryError, IncompatibleSign
from .geometry import MAX_DIM, Perforated

KINDS = ("MBN", "MAC", "TAC", "TC")
TOWERS = ("TAC", "TC")

# coincidence threshold for concentration points, relative to the domain diameter
SEPARATION_TOL = 1e-9


def alternating_signs(kappa):
    return tuple((-1) ** i for i in range(1, kappa + 1))


@dataclass(frozen=True, eq=False)
class Regime:
    """Problem family with the data fixing its reduced energy.

    ``interaction_sign`` multiplies the pair term of the multi-bubble
    energies; +1 keeps the sign as written in the expansion.
    """

    kind: str
    n: int
    kappa: int = 1
    eps_sign: int = 1
    lambdas: tuple = None
    hole_center: np.ndarray = None
    interaction_sign: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"regime kind must be one of {KINDS}")
        if not 3 <= self.n <= MAX_DIM:
            raise GeometryError(f"dimension {self.n} outside 3..{MAX_DIM}")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.kind == "MBN" and self.n < 5:
            raise ValueError("MBN needs n >= 5")
        if self.eps_sign not in (1, -1) or self.interaction_sign not in (1, -1):
            raise ValueError("signs must be +1 or -1")
        if self.kind in TOWERS:
            if self.eps_sign != 1:
                raise IncompatibleSign(f"{self.kind} needs epsilon > 0")
            lam = alternating_signs(self.kappa)
            if self.lambdas is not None and tuple(self.lambdas) != lam:
                raise ValueError("tower signs must alternate, lambda_i = (-1)^i")
            object.__setattr__(self, "lambdas", lam)
        else:
            lam = (1,) * self.kappa if self.lambdas is None else tuple(int(v) for v in self.lambdas)
            if len(lam) != self.kappa or any(v not in (1, -1) for v in lam):
                raise ValueError("lambdas must be kappa values in {-1, +1}")
            object.__setattr__(self, "lambdas", lam)
        if self.kind == "TC":
            if self.hole_center is None:
                raise ValueError("TC needs a hole center")
            z0 = np.array(self.hole_center, dtype=float).ravel()
            if len(z0) != self.n:
                raise GeometryError("hole center has the wrong dimension")
            z0.setflags(write=False)
            object.__setattr__(self, "hole_center", z0)
        elif self.hole_center is not None:
            raise ValueError("hole center only applies to TC")

    @property
    def gamma(self):
        n = self.n
        return {
            "MBN": (n - 2) / (n - 4),
            "MAC": 1.0,
            "TAC": 1.0,
            "TC": (n - 2) / (2 * self.kappa),
        }[self.kind]

    @property
    def dim(self):
        """Length of the packed coordinate vector."""
        k, n = self.kappa, self.n
        if self.kind == "TAC":
            return (k - 1) * n + n + k
        return k * n + k

    def exponent(self, i):
        """Power of |eps| in delta_i (1-based)."""
        n, k = self.n, self.kappa
        if self.kind == "MBN":
            return 1 / (n - 4)
        if self.kind == "MAC":
            return 1 / (n - 2)
        if self.kind == "TAC":
            return (2 * (i - 1) + 1) / (n - 2)
        return (2 * i - 1) / (2 * k)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "n": self.n,
            "kappa": self.kappa,
            "eps_sign": self.eps_sign,
            "lambdas": list(self.lambdas),
            "interaction_sign": self.interaction_sign,
        }
        if self.hole_center is not None:
            d["hole_center"] = self.hole_center.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            n=int(d["n"]),
            kappa=int(d.get("kappa", 1)),
            eps_sign=int(d.get("eps_sign", 1)),
            lambdas=d.get("lambdas"),
            hole_center=d.get("hole_center"),
            interaction_sign=int(d.get("interaction_sign", 1)),
        )


def _frozen(a, shape):
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Configuration:
    """Point of the reduced configuration space of a regime."""

    regime: Regime
    log_rates: np.ndarray
    points: np.ndarray = None
    sigmas: np.ndarray = None
    base: np.ndarray = None

    def __post_init__(self):
        r = self.regime
        k, n = r.kappa, r.n
        object.__setattr__(self, "log_rates", _frozen(self.log_rates, (k,)))
        if r.kind in ("MBN", "MAC"):
            if self.points is None:
                raise ValueError(f"{r.kind} needs concentration points")
            object.__setattr__(self, "points", _frozen(self.points, (k, n)))
        elif r.kind == "TAC":
            if self.base is None:
                raise ValueError("TAC needs a base point")
            s = np.zeros((k - 1, n)) if self.sigmas is None else self.sigmas
            object.__setattr__(self, "sigmas", _frozen(s, (k - 1, n)))
            object.__setattr__(self, "base", _frozen(self.base, (n,)))
        else:
            s = np.zeros((k, n)) if self.sigmas is None else self.sigmas
            object.__setattr__(self, "sigmas", _frozen(s, (k, n)))
        if not np.all(np.isfinite(self.vector)):
            raise ConfigOutsideLambda("configuration has non-finite coordinates")

    @property
    def rates(self):
        return np.exp(self.log_rates)

    @property
    def vector(self):
        kind = self.regime.kind
        if kind in ("MBN", "MAC"):
            parts = [self.points.ravel(), self.log_rates]
        elif kind == "TAC":
            parts = [self.sigmas.ravel(), self.base, self.log_rates]
        else:
            parts = [self.sigmas.ravel(), self.log_rates]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, regime, vec):
        vec = np.asarray(vec, dtype=float).ravel()
        if len(vec) != regime.dim:
            raise ValueError(f"expected {regime.dim} coordinates, got {len(vec)}")
        k, n = regime.kappa, regime.n
        ell = vec[-k:]
        if regime.kind in ("MBN", "MAC"):
            return cls(regime, ell, points=vec[: k * n])
        if regime.kind == "TAC":
            m = (k - 1) * n
            return cls(regime, ell, sigmas=vec[:m], base=vec[m : m + n])
        return cls(regime, ell, sigmas=vec[: k * n])

    def to_dict(self):
        d = {"regime": self.regime.to_dict(), "log_rates": self.log_rates.tolist()}
        for key in ("points", "sigmas", "base"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        reg = d["regime"]
        reg = reg if isinstance(reg, Regime) else Regime.from_dict(reg)
        return cls(reg, d["log_rates"], points=d.get("points"), sigmas=d.get("sigmas"), base=d.get("base"))


def delta_scaling(regime, epsilon, config, i):
    """Concentration rate delta_i (1-based) at parameter ``epsilon``."""
    if epsilon == 0 or np.sign(epsilon) != regime.eps_sign:
        raise IncompatibleSign(f"epsilon={epsilon} incompatible with {regime.kind} (sign {regime.eps_sign:+d})")
    if not 1 <= i <= regime.kappa:
        raise ValueError(f"index {i} outside 1..{regime.kappa}")
    return abs(epsilon) ** regime.exponent(i) * float(np.exp(config.log_rates[i - 1]))


def all_deltas(regime, epsilon, config):
    return np.array([delta_scaling(regime, epsilon, config, i) for i in range(1, regime.kappa + 1)])


def tower_centers(regime, epsilon, config):
    """Concentration points of a tower, ``z_i = base + delta_i sigma_i``."""
    if regime.kind not in TOWERS:
        raise ValueError("tower centers only exist for TAC and TC")
    deltas = all_deltas(regime, epsilon, config)
    if regime.kind == "TAC":
        sig = np.vstack([config.sigmas, np.zeros((1, regime.n))])
        return config.base + deltas[:, None] * sig
    return regime.hole_center + deltas[:, None] * config.sigmas


def concentration_points(regime, epsilon, config):
    if regime.kind in TOWERS:
        return tower_centers(regime, epsilon, config)
    return np.array(config.points)


# Reduced energies --------------------------------------------------------


def _robin_engine(engine, regime):
    # TC uses the unperforated domain; the hole is the vanishing parameter itself
    if regime.kind == "TC" and isinstance(engine.domain, Perforated):
        cached = getattr(engine, "_outer_engine", None)
        if cached is None:
            from .green import build_engine

            cached = build_engine(engine.domain.outer)
            engine._outer_engine = cached
        return cached
    return engine


def _check_points(engine, pts):
    dist = engine.domain.boundary_distance(pts)
    if np.any(dist <= 0):
        raise ConfigOutsideLambda("concentration point outside the domain")
    tol = SEPARATION_TOL * engine.domain.diameter
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if np.linalg.norm(pts[i] - pts[j]) < tol:
                raise ConfigOutsideLambda(f"concentration points {i + 1} and {j + 1} coincide")


def _check(engine, regime, config):
    if config.regime is not regime and config.regime.to_dict() != regime.to_dict():
        raise ValueError("configuration belongs to a different regime")
    if engine.n != regime.n:
        raise GeometryError("engine and regime dimensions differ")
    if regime.kind in ("MBN", "MAC"):
        _check_points(engine, config.points)
    elif regime.kind == "TAC":
        _check_points(engine, config.base[None])
    else:
        outer = _robin_engine(engine, regime).domain
        if outer.boundary_distance(regime.hole_center[None])[0] <= 0:
            raise ConfigOutsideLambda("hole center outside the domain")


def _multi_terms(engine, regime, config, grad):
    n, k = regime.n, regime.kappa
    m = (n - 2) / 2
    z = config.points
    d = config.rates
    lam = np.array(regime.lambdas, dtype=float)
    tau = engine.robin(z)
    val = float(np.sum(d ** (n - 2) * tau))
    gz = np.zeros((k, n))
    gl = (n - 2) * d ** (n - 2) * tau
    # sz, sl accumulate the sizes of the individual gradient contributions
    sz = np.zeros((k, n))
    sl = np.abs(gl)
    if grad:
        gz += (d ** (n - 2))[:, None] * engine.grad_robin(z)
        sz += np.abs(gz)
    if k > 1:
        ii, jj = np.triu_indices(k, 1)
        try:
            G = engine.green(z[ii], z[jj])
        except CoincidentPoints as exc:
            raise ConfigOutsideLambda(str(exc)) from exc
        c = 2.0 * regime.interaction_sign * lam[ii] * lam[jj] * (d[ii] * d[jj]) ** m
        val += float(np.sum(c * G))
        if grad:
            gx, gy = engine.grad_green(z[ii], z[jj])
            for idx, gv in ((ii, gx), (jj, gy)):
                np.add.at(gz, idx, c[:, None] * gv)
                np.add.at(sz, idx, np.abs(c[:, None] * gv))
                np.add.at(gl, idx, m * c * G)
                np.add.at(sl, idx, np.abs(m * c * G))
    # the rate term pushes d up for eps > 0 and down for eps < 0
    s = -1.0 if regime.eps_sign > 0 else 1.0
    if regime.kind == "MBN":
        val += s * float(np.sum(d * d))
        gl += s * 2 * d * d
        sl += 2 * d * d
    else:
        val += s * float(np.sum(config.log_rates))
        gl += s
        sl += 1.0
    return val, np.concatenate([gz.ravel(), gl]), np.concatenate([sz.ravel(), sl])


def _tower_terms(engine, regime, config, grad):
    n, k = regime.n, regime.kappa
    m = (n - 2) / 2
    ell = config.log_rates
    d = config.rates
    sig = config.sigmas
    gl = np.zeros(k)
    if regime.kind == "TAC":
        base = config.base
        tau = float(engine.robin(base[None])[0])
        gbase = d[0] ** (n - 2) * engine.grad_robin(base[None])[0] if grad else np.zeros(n)
        sign = -1.0
        chain = sig
    else:
        tau = float(_robin_engine(engine, regime).robin(regime.hole_center[None])[0])
        chain = sig[:-1]
        sign = 1.0
    val = tau * d[0] ** (n - 2)
    gl[0] += (n - 2) * val
    sl = np.abs(gl)
    # neighbour coupling terms (1 + |sigma_i|^2)^(-m) (d_{i+1}/d_i)^m
    s2 = np.sum(chain * chain, axis=1)
    A = (1 + s2) ** (-m)
    ratio = np.exp(m * (ell[1:] - ell[:-1]))
    terms = A * ratio
    val += sign * float(np.sum(terms))
    gl[1:] += sign * m * terms
    gl[:-1] -= sign * m * terms
    sl[1:] += m * terms
    sl[:-1] += m * terms
    gsig = sign * (-2 * m) * (terms / (1 + s2))[:, None] * chain
    if regime.kind == "TAC":
        val -= float(np.sum(ell))
        gl -= 1.0
        sl += 1.0
        g = np.concatenate([gsig.ravel(), gbase, gl])
    else:
        sk = sig[-1]
        B = (1 + sk @ sk) ** (-(n - 2)) * d[-1] ** (-(n - 2))
        val += B
        gl[-1] -= (n - 2) * B
        sl[-1] += (n - 2) * B
        gk = -2 * (n - 2) * B / (1 + sk @ sk) * sk
        g = np.concatenate([gsig.ravel(), gk, gl])
    return val, g, np.concatenate([np.abs(g[: len(g) - k]), sl])


def _evaluate(engine, regime, config, grad):
    _check(engine, regime, config)
    if regime.kind in TOWERS:
        return _tower_terms(engine, regime, config, grad)
    return _multi_terms(engine, regime, config, grad)


def reduced_value(engine, regime, config):
    """Reduced energy of ``config`` (Phi for multi-bubbles, Psi for towers)."""
    return _evaluate(engine, regime, config, grad=False)[0]


def reduced_gradient(engine, regime, config, with_scale=False):
    """Gradient in the packed coordinates (points/offsets, base, log-rates).

    With ``with_scale`` also returns, per coordinate, the sum of the absolute
    values of the separate contributions to that gradient entry. A gradient
    small against this scale is a genuine cancellation; a gradient that is
    merely small because every term decays is not.
    """
    _, g, s = _evaluate(engine, regime, config, grad=True)
    return (g, s) if with_scale else g


def fd_hessian(grad_fn, x, step=1e-4):
    """Symmetrised central-difference Jacobian of ``grad_fn`` at ``x``.

    ``step`` is relative: coordinate k moves by ``step * max(1, |x_k|)``.
    Returns ``(hessian, asymmetry)`` where ``asymmetry`` is the largest
    entry of the raw antisymmetric part relative to the largest entry.
    """
    x = np.asarray(x, dtype=float)
    m = len(x)
    raw = np.empty((m, m))
    for k in range(m):
        h = step * max(1.0, abs(x[k]))
        e = np.zeros(m)
        e[k] = h
        raw[:, k] = (np.asarray(grad_fn(x + e)) - np.asarray(grad_fn(x - e))) / (2 * h)
    scale = max(float(np.max(np.abs(raw))), 1e-300)
    asym = float(np.max(np.abs(raw - raw.T))) / scale
    return 0.5 * (raw + raw.T), asym


def reduced_hessian(engine, regime, config, step=1e-4):
    """Hessian of the reduced energy by differencing the analytic gradient."""

    def grad(v):
        return reduced_gradient(engine, regime, Configuration.from_vector(regime, v))

    return fd_hessian(grad, config.vector, step)[0]
