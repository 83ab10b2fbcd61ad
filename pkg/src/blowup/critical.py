"""Critical points of reduced energies: descent, saddle search, classification."""

import itertools
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigOutsideLambda, GeometryError, MaxIters, NotCritical, SingularHessian
from .reduced import TOWERS, Configuration, fd_hessian, reduced_gradient, reduced_value

CLASSES = ("IsolatedMin", "IsolatedMax", "NonDegenerate", "MinMax", "Degenerate", "EscapedLambda")
ESCAPES = ("d->0", "d->inf", "boundary", "collision", "sigma->inf")

# relative size of value changes treated as round-off during the final polish
ROUNDOFF = 1e-14


@dataclass(frozen=True)
class SearchOptions:
    max_iters: int = 500
    grad_tol: float = 1e-9
    trust_radius: float = 0.5
    max_trust: float = 4.0
    ell_bound: float = 20.0
    sigma_bound: float = 50.0
    margin: float = 1e-3
    rel_tol: float = 1e-6
    dedup_radius: float = 1e-4
    nu_rel: float = 1e-6
    hess_step: float = 1e-4
    retries: int = 3

    def __post_init__(self):
        for name in ("grad_tol", "trust_radius", "max_trust", "ell_bound", "sigma_bound", "margin", "rel_tol",
                     "dedup_radius", "nu_rel", "hess_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class CriticalPoint:
    config: Configuration
    value: float
    grad_norm: float
    hess_spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    classification: str = "Degenerate"
    index: int = 0
    escape: str = None
    iterations: int = 0

    @property
    def regime(self):
        return self.config.regime

    @property
    def escaped(self):
        return self.classification == "EscapedLambda"

    def to_dict(self):
        return {
            "classification": self.classification,
            "index": int(self.index),
            "escape": self.escape,
            "value": float(self.value),
            "grad_norm": float(self.grad_norm),
            "hess_spectrum": [float(v) for v in self.hess_spectrum],
            "iterations": int(self.iterations),
            "config": self.config.to_dict(),
        }


class _Problem:
    """Reduced energy in packed coordinates with the escape bookkeeping."""

    def __init__(self, engine, regime, opts):
        self.engine = engine
        self.regime = regime
        self.opts = opts
        k, n = regime.kappa, regime.n
        self.ell = slice(regime.dim - k, regime.dim)
        self.diam = engine.domain.diameter
        # coordinates along which the critical point is a maximum for every choice
        # of the others: every hole-tower offset term decreases in |sigma|
        self.max_block = np.arange(k * n) if regime.kind == "TC" else np.arange(0)

    def config(self, x):
        return Configuration.from_vector(self.regime, x)

    def value(self, x):
        try:
            return reduced_value(self.engine, self.regime, self.config(x))
        except (ConfigOutsideLambda, GeometryError):
            return np.inf

    def grad(self, x):
        return reduced_gradient(self.engine, self.regime, self.config(x))

    def converged(self, x, idx=None):
        """Absolute tolerance and smallness against the size of the separate terms."""
        g, s = reduced_gradient(self.engine, self.regime, self.config(x), with_scale=True)
        if idx is not None:
            g, s = g[idx], s[idx]
        gn = np.linalg.norm(g)
        return gn <= self.opts.grad_tol and gn <= self.opts.rel_tol * np.linalg.norm(s)

    def hessian(self, x):
        return fd_hessian(self.grad, x, self.opts.hess_step)[0]

    def escape(self, x):
        """Reason for leaving the admissible set, or None."""
        o = self.opts
        ell = x[self.ell]
        if np.any(ell < -o.ell_bound):
            return "d->0"
        if np.any(ell > o.ell_bound):
            return "d->inf"
        cfg = self.config(x)
        tol = o.margin * self.diam
        if self.regime.kind in TOWERS:
            if np.any(np.linalg.norm(cfg.sigmas, axis=1) > o.sigma_bound):
                return "sigma->inf"
            pts = cfg.base[None] if cfg.base is not None else None
        else:
            pts = cfg.points
        if pts is not None:
            if np.any(self.engine.domain.boundary_distance(pts) < tol):
                return "boundary"
            for i, j in itertools.combinations(range(len(pts)), 2):
                if np.linalg.norm(pts[i] - pts[j]) < tol:
                    return "collision"
        return None


class _Restricted:
    """``sign * energy`` as a function of the coordinates ``idx`` only."""

    def __init__(self, prob, x, idx, sign):
        self.prob, self.x, self.idx, self.sign = prob, x.copy(), idx, sign

    def full(self, y):
        x = self.x.copy()
        x[self.idx] = y
        return x

    def value(self, y):
        return self.sign * self.prob.value(self.full(y))

    def grad(self, y):
        return self.sign * self.prob.grad(self.full(y))[self.idx]

    def hessian(self, y):
        return fd_hessian(self.grad, y, self.prob.opts.hess_step)[0]


def _polish(fun, y, f, g, done, max_steps):
    """Newton steps on a positive definite Hessian near a minimum.

    A step is taken when it lowers the value, or when the value change is
    at round-off level and the gradient shrinks.
    """
    for _ in range(max_steps):
        if done(y):
            return y, f, g, True
        try:
            L = np.linalg.cholesky(fun.hessian(y))
        except np.linalg.LinAlgError:
            return y, f, g, False
        s = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        for _ in range(30):
            yt = y + s
            ft = fun.value(yt)
            if ft <= f or abs(ft - f) <= ROUNDOFF * max(1.0, abs(f)):
                gt = fun.grad(yt)
                if ft <= f or np.linalg.norm(gt) < np.linalg.norm(g):
                    break
            s *= 0.5
        else:
            return y, f, g, False
        y, f, g = yt, min(ft, f), gt
    return y, f, g, done(y)


def _descent(prob, x, idx, sign=1.0):
    """BFGS with Armijo backtracking on ``sign * energy`` over coordinates ``idx``.

    Returns ``(x, iterations, escape_reason, converged)``; accepted iterates
    never increase the objective beyond round-off.
    """
    o = prob.opts
    fun = _Restricted(prob, x, idx, sign)
    y = x[idx].copy()
    f = fun.value(y)
    if not np.isfinite(f):
        raise ConfigOutsideLambda("configuration outside the admissible set")
    g = fun.grad(y)
    m = len(y)
    B = np.eye(m)

    def done(v):
        return prob.converged(fun.full(v), idx)

    it = 0
    while it < o.max_iters:
        reason = prob.escape(fun.full(y))
        if reason:
            return fun.full(y), it, reason, False
        if done(y):
            return fun.full(y), it, None, True
        gn = np.linalg.norm(g)
        if gn < 1e-5:
            yp, fp, gp, ok = _polish(fun, y, f, g, done, 20)
            it += 1
            if ok:
                return fun.full(yp), it, None, True
            if fp < f:
                y, f, g = yp, fp, gp
        it += 1
        s = -B @ g
        if s @ g >= 0:
            B = np.eye(m)
            s = -g
        ns = np.linalg.norm(s)
        if ns > o.max_trust:
            s *= o.max_trust / ns
        t = 1.0
        while t >= 1e-12:
            yt = y + t * s
            ft = fun.value(yt)
            if ft <= f + 1e-4 * t * (g @ s):
                break
            t *= 0.5
        else:
            # no descent left at this precision: the polish decides
            yp, fp, gp, ok = _polish(fun, y, f, g, done, 20)
            return fun.full(yp if ok or fp < f else y), it, None, ok
        gt = fun.grad(yt)
        sk, yk = yt - y, gt - g
        sy = sk @ yk
        if sy > 1e-12 * np.linalg.norm(sk) * np.linalg.norm(yk) and sy > 1e-300:
            rho = 1.0 / sy
            V = np.eye(m) - rho * np.outer(sk, yk)
            B = V @ B @ V.T + rho * np.outer(sk, sk)
        y, f, g = yt, ft, gt
    return fun.full(y), it, prob.escape(fun.full(y)), False


def _escaped(prob, x, reason, it):
    cfg = prob.config(x)
    try:
        val = reduced_value(prob.engine, prob.regime, cfg)
        gn = float(np.linalg.norm(prob.grad(x)))
    except (ConfigOutsideLambda, GeometryError):
        val, gn = np.nan, np.nan
    return CriticalPoint(cfg, val, gn, classification="EscapedLambda", escape=reason, iterations=it)


def _spectrum_class(eig, nu):
    """Classification from a sorted spectrum and degeneracy threshold."""
    neg = int(np.sum(eig < -nu))
    if np.min(np.abs(eig)) <= nu:
        return "Degenerate", neg
    if neg == 0:
        return "IsolatedMin", 0
    if neg == len(eig):
        return "IsolatedMax", neg
    return "NonDegenerate", neg


def _classify_hessian(H, regime, nu_rel, nu=None):
    eig = np.linalg.eigvalsh(H)
    if nu is None:
        nu = nu_rel * max(float(np.max(np.abs(eig))), 1e-300)
    cls, idx = _spectrum_class(eig, nu)
    if cls == "Degenerate":
        # min-max structure: definite minimum across the rates, maximum across the rest
        k = regime.kappa
        Hl = H[-k:, -k:]
        Hp = H[:-k, :-k]
        if len(Hp) and np.min(np.linalg.eigvalsh(Hl)) > nu and np.max(np.linalg.eigvalsh(Hp)) < nu:
            cls = "MinMax"
    return cls, idx, eig


def _finish(prob, x, it):
    cfg = prob.config(x)
    g = prob.grad(x)
    cls, idx, eig = _classify_hessian(prob.hessian(x), prob.regime, prob.opts.nu_rel)
    value = reduced_value(prob.engine, prob.regime, cfg)
    return CriticalPoint(cfg, value, float(np.linalg.norm(g)), eig, cls, idx, None, it)


def classify(engine, regime, config, nu=None, opts=None):
    """Classify a critical configuration by its Hessian spectrum.

    ``nu`` is the degeneracy threshold; by default ``opts.nu_rel`` times
    the spectral radius. Returns ``(classification, index)`` and raises
    :class:`NotCritical` when the gradient exceeds ``opts.grad_tol``.
    """
    opts = opts or SearchOptions()
    gn = float(np.linalg.norm(reduced_gradient(engine, regime, config)))
    if gn > opts.grad_tol:
        raise NotCritical(f"gradient norm {gn:.3e} exceeds {opts.grad_tol:.1e}")
    prob = _Problem(engine, regime, opts)
    cls, idx, _ = _classify_hessian(prob.hessian(config.vector), regime, opts.nu_rel, nu)
    return cls, idx


def minimize(engine, regime, init, opts=None):
    """Quasi-Newton descent on the reduced energy.

    Leaving the admissible set (rates beyond ``exp(+-ell_bound)``, points
    within the margin of the boundary or of each other, tower offsets
    beyond ``sigma_bound``) returns an ``EscapedLambda`` point.
    """
    opts = opts or SearchOptions()
    prob = _Problem(engine, regime, opts)
    x, it, reason, ok = _descent(prob, init.vector.copy(), np.arange(regime.dim))
    if reason:
        return _escaped(prob, x, reason, it)
    if not ok:
        gn = np.linalg.norm(prob.grad(x))
        raise MaxIters(f"minimize stopped after {it} iterations at |grad|={gn:.2e}")
    return _finish(prob, x, it)


def _newton_lm(prob, x):
    """Levenberg-Marquardt on grad = 0 with a trust region on the step.

    Returns ``(x, iterations, escape_reason)``.
    """
    o = prob.opts
    g = prob.grad(x)
    phi = 0.5 * g @ g
    mu = 0.0
    radius = o.trust_radius
    it = 0
    stall = 0
    m = len(x)
    while it < o.max_iters:
        reason = prob.escape(x)
        if reason:
            return x, it, reason
        if prob.converged(x):
            return x, it, None
        it += 1
        H = prob.hessian(x)
        hs = max(1.0, float(np.max(np.abs(H))))
        progressed = False
        for _ in range(40):
            try:
                if mu == 0.0:
                    s = -np.linalg.solve(H, g)
                else:
                    s = -np.linalg.solve(H.T @ H + mu * np.eye(m), H.T @ g)
            except np.linalg.LinAlgError:
                mu = 1e-8 * hs * hs
                continue
            ns = np.linalg.norm(s)
            if ns > radius:
                s *= radius / ns
            xt = x + s
            if not np.isfinite(prob.value(xt)):
                radius *= 0.5
                continue
            gt = prob.grad(xt)
            pt = 0.5 * gt @ gt
            if pt < phi:
                x, g, phi = xt, gt, pt
                mu = mu / 10 if mu > 1e-12 * hs * hs else 0.0
                radius = min(o.max_trust, 2 * radius)
                progressed = True
                break
            mu = max(10 * mu, 1e-10 * hs * hs)
            radius *= 0.5
            if radius < 1e-14:
                break
        if progressed:
            stall = 0
            continue
        if prob.converged(x):
            return x, it, None
        stall += 1
        if stall > 2:
            raise SingularHessian("saddle search stalled at a non-critical point")
        mu, radius = 0.0, o.trust_radius
    raise MaxIters(f"saddle search did not converge in {o.max_iters} iterations")


def _block_minmax(prob, x, rounds=50):
    """Alternate an ascent over the max block and a descent over the rest."""
    hi = prob.max_block
    lo = np.setdiff1d(np.arange(len(x)), hi)
    for _ in range(rounds):
        x, _, reason, _ = _descent(prob, x, hi, sign=-1.0)
        if reason:
            return x, reason
        x, _, reason, _ = _descent(prob, x, lo, sign=1.0)
        if reason:
            return x, reason
        if np.linalg.norm(prob.grad(x)) < 1e-6:
            break
    return x, None


def saddle_search(engine, regime, init, opts=None, seed=0):
    """Newton iteration on ``grad = 0`` with trust region and least-squares fallback.

    If the Newton run leaves the admissible set and the regime has a block
    of coordinates along which critical points are maxima, the search
    restarts from a block min-max alternation. A stalled run is retried
    from a perturbed start, at most ``opts.retries`` times, with a
    :class:`SingularHessian` warning each time.
    """
    opts = opts or SearchOptions()
    prob = _Problem(engine, regime, opts)
    x0 = init.vector.copy()
    if not np.isfinite(prob.value(x0)):
        raise ConfigOutsideLambda("initial configuration outside the admissible set")
    rng = np.random.default_rng(seed)
    x = x0
    for attempt in range(opts.retries + 1):
        try:
            xs, it, reason = _newton_lm(prob, x)
            if reason and len(prob.max_block):
                xb, reason_b = _block_minmax(prob, x)
                if reason_b is None:
                    xs, it, reason = _newton_lm(prob, xb)
        except SingularHessian as exc:
            if attempt == opts.retries:
                raise MaxIters(f"saddle search failed after {opts.retries} retries: {exc}") from exc
            warnings.warn(f"{exc}; retrying from a perturbed start", SingularHessian, stacklevel=2)
            for _ in range(20):
                x = x0 + 0.05 * rng.standard_normal(len(x0))
                if np.isfinite(prob.value(x)):
                    break
            continue
        if reason:
            return _escaped(prob, xs, reason, it)
        return _finish(prob, xs, it)


# Multistart --------------------------------------------------------------


def sample_start(engine, regime, rng):
    """Random start: points uniform in an interior shrink, l in [-2, 2], sigma ~ N(0, 1)."""
    k, n = regime.kappa, regime.n
    ell = rng.uniform(-2.0, 2.0, k)
    dom = engine.domain
    shrink = 0.1 * dom.inradius
    if regime.kind in ("MBN", "MAC"):
        while True:
            pts = dom.sample_interior(rng, k, shrink)
            sep = [np.linalg.norm(pts[i] - pts[j]) for i, j in itertools.combinations(range(k), 2)]
            if not sep or min(sep) > shrink:
                break
        return Configuration(regime, ell, points=pts)
    if regime.kind == "TAC":
        base = dom.sample_interior(rng, 1, shrink)[0]
        return Configuration(regime, ell, sigmas=rng.standard_normal((k - 1, n)), base=base)
    return Configuration(regime, ell, sigmas=rng.standard_normal((k, n)))


def _search(engine, regime, init, opts, method, seed):
    try:
        if method == "saddle":
            return saddle_search(engine, regime, init, opts, seed)
        cp = minimize(engine, regime, init, opts)
        if method == "minimize" or not cp.escaped:
            return cp
        try:
            alt = saddle_search(engine, regime, init, opts, seed)
        except (MaxIters, ConfigOutsideLambda):
            return cp
        return alt if not alt.escaped else cp
    except MaxIters:
        return None


def _scaled(cp, diam):
    cfg = cp.config
    reg = cfg.regime
    k = reg.kappa
    if reg.kind in ("MBN", "MAC"):
        pts = np.asarray(cfg.points) / diam
        ell = np.asarray(cfg.log_rates)
        out = []
        # relabelling bubbles of equal sign gives the same configuration
        groups = [[i for i in range(k) if reg.lambdas[i] == s] for s in (1, -1)]
        for p1 in itertools.permutations(groups[0]):
            for p2 in itertools.permutations(groups[1]):
                perm = np.empty(k, dtype=int)
                perm[groups[0]] = p1
                perm[groups[1]] = p2
                out.append(np.concatenate([pts[perm].ravel(), ell[perm]]))
        return out
    v = cfg.vector.copy()
    if reg.kind == "TAC":
        m = (k - 1) * reg.n
        v[m : m + reg.n] /= diam
    return [v]


@dataclass
class MultistartResult:
    points: list
    escapes: list
    failures: int
    count: int

    @property
    def escape_stats(self):
        stats = {r: 0.0 for r in ESCAPES}
        for cp in self.escapes:
            stats[cp.escape] += 1.0 / self.count
        return stats

    def to_dict(self):
        return {
            "count": self.count,
            "critical_points": [cp.to_dict() for cp in self.points],
            "escaped": len(self.escapes),
            "failed": self.failures,
            "escape_fractions": self.escape_stats,
        }


def multistart(engine, regime, seed, count, opts=None, method="auto", workers=1):
    """Deduplicated critical points from ``count`` seeded random starts.

    ``method`` is ``"minimize"``, ``"saddle"`` or ``"auto"`` (descent first,
    then a saddle search from the same start when the descent escapes).
    Output depends only on the arguments, not on ``workers``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    opts = opts or SearchOptions()
    seeds = np.random.SeedSequence(seed).spawn(count)
    starts = [sample_start(engine, regime, np.random.default_rng(s)) for s in seeds]

    def run(i):
        return _search(engine, regime, starts[i], opts, method, seed + i)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            found = list(ex.map(run, range(count)))
    else:
        found = [run(i) for i in range(count)]

    diam = engine.domain.diameter
    distinct, escapes, failures = [], [], 0
    for cp in found:
        if cp is None:
            failures += 1
        elif cp.escaped:
            escapes.append(cp)
        else:
            # independent post-hoc check of the gradient
            gn = float(np.linalg.norm(reduced_gradient(engine, regime, cp.config)))
            if gn > opts.grad_tol:
                failures += 1
                continue
            cp = replace(cp, grad_norm=gn)
            key = _scaled(cp, diam)[0]
            if any(min(np.linalg.norm(key - v) for v in _scaled(d, diam)) < opts.dedup_radius for d in distinct):
                continue
            distinct.append(cp)
    distinct.sort(key=lambda c: c.value)
    return MultistartResult(distinct, escapes, failures, count)
