"""Dirichlet Green's function of the negative Laplacian on bounded domains.

``G(x, y) = c_n |x - y|^(2-n) - H(x, y)`` where the regular part ``H`` is
harmonic in each variable and matches the singular part on the boundary.
Three engines are available:

* ``ImageEngine``: closed-form image charge on a ball.
* ``RingEngine``: collocation with ring charges for domains bounded by
  concentric spheres (ball, annulus, ball with a concentric hole). Every
  source lies on a symmetry axis after a rotation, so the boundary problem
  reduces to the meridian half-plane.
* ``PointEngine``: collocation with point charges for everything else.

Both collocation engines solve for the charge weights through a precomputed
pseudo-inverse, so gradients in either argument are exact derivatives of the
charge expansion.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from . import kernels
from .errors import CoincidentPoints, CollocationDivergence, GeometryError
from .geometry import MAX_DIM, Annulus, Ball, Perforated, domain_from_dict, green_constant

RING_INTERVALS = 200
RING_OFFSET = 3.0
RING_OVERSAMPLE = 3
POINT_OFFSET = 2.0
POINT_OVERSAMPLE = 3
LADDER_STEPS = 3
PINV_CUTOFF = 1e-15
# holes closer than this (relative) to the ball center count as concentric
CONCENTRIC_TOL = 1e-9
CHUNK = 256
# point-charge probes sit this deep (fraction of the inradius) inside the domain
PROBE_DEPTH = 0.25


def _pinv_columns(A, cutoff=PINV_CUTOFF):
    """Pseudo-inverse of ``A`` after scaling its columns to unit norm."""
    sc = np.linalg.norm(A, axis=0)
    sc[sc == 0] = 1.0
    U, S, Vt = np.linalg.svd(A / sc, full_matrices=False)
    keep = S > S[0] * cutoff
    return (Vt[keep].T / S[keep]) @ U[:, keep].T / sc[:, None]


def _unit(v, tiny):
    nv = np.linalg.norm(v, axis=-1)
    safe = np.where(nv > tiny, nv, 1.0)
    return v / safe[..., None], nv


class HarmonicField:
    """Harmonic function given by a charge representation.

    ``rep`` is a JSON-ready dictionary describing the charges; see
    :func:`harmonic_from_dict`. ``boundary_residual`` is the relative
    boundary mismatch measured when the field was fitted.
    """

    def __init__(self, value_fn, grad_fn, boundary_residual, rep):
        self._value = value_fn
        self._grad = grad_fn
        self.boundary_residual = boundary_residual
        self.rep = rep

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self._value(x.reshape(-1, x.shape[-1])).reshape(x.shape[:-1])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self._grad(x.reshape(-1, x.shape[-1])).reshape(x.shape)

    __call__ = value

    def to_dict(self):
        return dict(self.rep, boundary_residual=self.boundary_residual)


def point_field(charges, weights, n, residual=0.0):
    """Sum of ``w_k |x - c_k|^(2-n)``."""
    charges = np.atleast_2d(np.asarray(charges, dtype=float))
    weights = np.asarray(weights, dtype=float).ravel()

    def value(X):
        out = np.empty(len(X))
        for i in range(0, len(X), CHUNK):
            d = np.linalg.norm(X[i : i + CHUNK, None, :] - charges[None], axis=-1)
            out[i : i + CHUNK] = d ** (2 - n) @ weights
        return out

    def grad(X):
        out = np.empty_like(X)
        for i in range(0, len(X), CHUNK):
            d = X[i : i + CHUNK, None, :] - charges[None]
            r = np.linalg.norm(d, axis=-1)
            out[i : i + CHUNK] = np.einsum("ikd,k->id", (2 - n) * r[..., None] ** (-n) * d, weights)
        return out

    rep = {"kind": "point", "n": n, "charges": charges.tolist(), "weights": weights.tolist()}
    return HarmonicField(value, grad, residual, rep)


def constant_field(c, n):
    rep = {"kind": "constant", "n": n, "value": float(c)}
    return HarmonicField(lambda X: np.full(len(X), float(c)), np.zeros_like, 0.0, rep)


def ring_field(center, axis, b, r, weights, n, residual=0.0):
    """Sum of ring charges about the line through ``center`` along ``axis``."""
    center = np.asarray(center, dtype=float)
    e = np.asarray(axis, dtype=float)
    b, r, q = (np.asarray(v, dtype=float).ravel() for v in (b, r, weights))

    def coords(X):
        xt = X - center
        a = xt @ e
        er, rho = _unit(xt - a[:, None] * e, 1e-300)
        return a, rho, er

    def value(X):
        a, rho, _ = coords(X)
        return kernels.ring_apply(a, rho, b, r, q, n)[0]

    def grad(X):
        a, rho, er = coords(X)
        _, va, vr = kernels.ring_apply(a, rho, b, r, q, n)
        return va[:, None] * e + vr[:, None] * er

    rep = {
        "kind": "ring",
        "n": n,
        "center": center.tolist(),
        "axis": e.tolist(),
        "b": b.tolist(),
        "r": r.tolist(),
        "weights": q.tolist(),
    }
    return HarmonicField(value, grad, residual, rep)


def kelvin_field(p, rho2, inner, n):
    """Pull back ``inner`` through the inversion about ``p`` with radius^2 ``rho2``."""
    p = np.asarray(p, dtype=float)

    def mapped(X):
        v = X - p
        r2 = np.sum(v * v, axis=1)
        return p + rho2 * v / r2[:, None], (rho2 / r2) ** ((n - 2) / 2), v, r2

    def value(X):
        iX, w, _, _ = mapped(X)
        return w * inner.value(iX)

    def grad(X):
        iX, w, v, r2 = mapped(X)
        u = v / np.sqrt(r2)[:, None]
        g = inner.grad(iX)
        pulled = (rho2 / r2)[:, None] * (g - 2.0 * u * np.sum(u * g, axis=1)[:, None])
        dw = -(n - 2) * (w / r2)[:, None] * v
        return dw * inner.value(iX)[:, None] + w[:, None] * pulled

    rep = {"kind": "kelvin", "n": n, "p": p.tolist(), "rho2": float(rho2), "inner": inner.rep}
    return HarmonicField(value, grad, inner.boundary_residual, rep)


def harmonic_from_dict(d):
    """Rebuild a :class:`HarmonicField` from its ``to_dict`` output."""
    kind, n = d["kind"], int(d["n"])
    res = float(d.get("boundary_residual", 0.0))
    if kind == "point":
        f = point_field(d["charges"], d["weights"], n, res)
    elif kind == "constant":
        f = constant_field(d["value"], n)
    elif kind == "ring":
        f = ring_field(d["center"], d["axis"], d["b"], d["r"], d["weights"], n, res)
    elif kind == "kelvin":
        f = kelvin_field(d["p"], d["rho2"], harmonic_from_dict(dict(d["inner"], boundary_residual=res)), n)
    else:
        raise GeometryError(f"unknown harmonic field kind {kind!r}")
    f.boundary_residual = res
    return f


class GreenEngine:
    """Common evaluation front end. Subclasses implement ``_H`` and ``_gradH``."""

    method = "Collocation"
    scheme = ""

    def __init__(self, domain, tol):
        self.domain = domain
        self.n = domain.n
        self.c_n = green_constant(self.n)
        self.tol = tol
        self.collocation_residual = 0.0

    # -- input handling ---------------------------------------------------
    def _pairs(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[-1] != self.n or y.shape[-1] != self.n:
            raise GeometryError(f"points must live in R^{self.n}")
        x, y = np.broadcast_arrays(x, y)
        shape = x.shape[:-1]
        X = x.reshape(-1, self.n)
        Y = y.reshape(-1, self.n)
        self._check_interior(X)
        self._check_interior(Y)
        return X, Y, shape

    def _check_interior(self, X):
        if np.any(self.domain.boundary_distance(X) <= 0.0):
            raise GeometryError("evaluation point is not interior to the domain")

    # -- public evaluation ------------------------------------------------
    def regular_part(self, x, y):
        X, Y, shape = self._pairs(x, y)
        return self._H(X, Y).reshape(shape)

    def grad_regular_part(self, x, y):
        X, Y, shape = self._pairs(x, y)
        gx, gy = self._gradH(X, Y)
        return gx.reshape(shape + (self.n,)), gy.reshape(shape + (self.n,))

    def green(self, x, y):
        X, Y, shape = self._pairs(x, y)
        r = np.linalg.norm(X - Y, axis=1)
        if np.any(r < 1e-12 * self.domain.diameter):
            raise CoincidentPoints("Green's function evaluated at coincident points")
        return (self.c_n * r ** (2 - self.n) - self._H(X, Y)).reshape(shape)

    def grad_green(self, x, y):
        """Gradient of G in x and in y."""
        X, Y, shape = self._pairs(x, y)
        d = X - Y
        r = np.linalg.norm(d, axis=1)
        if np.any(r < 1e-12 * self.domain.diameter):
            raise CoincidentPoints("Green's function evaluated at coincident points")
        gs = self.c_n * (2 - self.n) * r[:, None] ** (-self.n) * d
        hx, hy = self._gradH(X, Y)
        return (gs - hx).reshape(shape + (self.n,)), (-gs - hy).reshape(shape + (self.n,))

    def robin(self, x):
        return self.regular_part(x, x)

    def grad_robin(self, x):
        gx, gy = self.grad_regular_part(x, x)
        return gx + gy

    def extend(self, data_fn, axis_point=None, scale=0.0):
        """Harmonic extension of boundary data ``data_fn(points) -> values``.

        For the ring engines the data must be invariant under rotations about
        the line through the domain center and ``axis_point``. Bubble data
        centered at ``axis_point`` with rate ``scale`` qualifies; passing the
        rate lets the inversion engine track the bubble through its map.
        """
        raise NotImplementedError

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "method": self.method,
            "domain": self.domain.to_dict(),
            "c_n": self.c_n,
            "tol": self.tol,
            "collocation_residual": self.collocation_residual,
        }


class ImageEngine(GreenEngine):
    """Closed-form regular part on a ball."""

    method = "AnalyticBall"
    scheme = "image"

    def __init__(self, domain, tol=0.0):
        if not isinstance(domain, Ball):
            raise GeometryError("image formula is only available on a ball")
        super().__init__(domain, tol)

    def _Q(self, X, Y):
        xt = X - self.domain.center
        yt = Y - self.domain.center
        R2 = self.domain.radius**2
        x2 = np.sum(xt * xt, axis=1)
        y2 = np.sum(yt * yt, axis=1)
        Q = x2 * y2 / R2 - 2.0 * np.sum(xt * yt, axis=1) + R2
        return Q, xt, yt, x2, y2, R2

    def _H(self, X, Y):
        Q = self._Q(X, Y)[0]
        return self.c_n * Q ** (-(self.n - 2) / 2)

    def _gradH(self, X, Y):
        Q, xt, yt, x2, y2, R2 = self._Q(X, Y)
        alpha = (self.n - 2) / 2
        f = -alpha * self.c_n * Q ** (-alpha - 1)
        gx = f[:, None] * (2.0 * y2[:, None] * xt / R2 - 2.0 * yt)
        gy = f[:, None] * (2.0 * x2[:, None] * yt / R2 - 2.0 * xt)
        return gx, gy

    @cached_property
    def _ring(self):
        return RingEngine(self.domain, RING_INTERVALS, tol=1e-6)

    def extend(self, data_fn, axis_point=None, scale=0.0):
        return self._ring.extend(data_fn, axis_point)


def meridian_nodes(intervals):
    """Angles in [0, pi], graded toward 0 where the axis source is nearest."""
    hmax = np.pi / intervals
    hmin = hmax / 8
    th = [0.0]
    while th[-1] < np.pi:
        th.append(th[-1] + min(hmax, hmin + 0.15 * th[-1]))
    th = np.array(th)
    return th * np.pi / th[-1]


class RingEngine(GreenEngine):
    """Ring-charge collocation on domains bounded by concentric spheres."""

    scheme = "ring"

    def __init__(self, domain, intervals=RING_INTERVALS, tol=1e-7, offset=RING_OFFSET):
        super().__init__(domain, tol)
        center = domain.axis_center()
        if center is None:
            raise GeometryError("ring collocation needs concentric spherical boundaries")
        self.center = center
        self.intervals = int(intervals)
        self.offset = float(offset)
        sph = domain.spheres()
        self.radii = np.array([s.radius for s in sph])
        self.signs = np.array([s.sign for s in sph])
        self.r_lo = max([s.radius for s in sph if s.sign < 0], default=0.0)
        self.r_hi = max(self.radii)

        th = meridian_nodes(self.intervals)
        hl = np.gradient(th)
        col = (th[:-1, None] + np.diff(th)[:, None] * np.arange(RING_OVERSAMPLE)[None] / RING_OVERSAMPLE).ravel()
        col = np.append(col, np.pi)
        chk = 0.5 * (col[1:] + col[:-1])
        b, r, ca, cr, ka, kr = [], [], [], [], [], []
        for R, sg in zip(self.radii, self.signs):
            Rc = R * (1.0 + sg * self.offset * hl)
            b.append(Rc * np.cos(th))
            r.append(Rc * np.sin(th))
            ca.append(R * np.cos(col))
            cr.append(R * np.sin(col))
            ka.append(R * np.cos(chk))
            kr.append(R * np.sin(chk))
        self.b, self.r = np.concatenate(b), np.concatenate(r)
        self.col_a, self.col_r = np.concatenate(ca), np.concatenate(cr)
        self.chk_a, self.chk_r = np.concatenate(ka), np.concatenate(kr)
        A = kernels.ring_eval(self.col_a[:, None], self.col_r[:, None], self.b[None], self.r[None], self.n)[0]
        self.P = _pinv_columns(A)
        self.collocation_residual = self._probe()

    @property
    def charges(self):
        return np.column_stack([self.b, self.r])

    def _data(self, a, r, s):
        """Singular part c_n |x - s e|^(2-n) at meridian points for axis sources s."""
        alpha = (self.n - 2) / 2
        d2 = (a[:, None] - s[None]) ** 2 + r[:, None] ** 2
        return self.c_n * d2 ** (-alpha), 2 * alpha * self.c_n * (a[:, None] - s[None]) * d2 ** (-alpha - 1)

    def _probe(self):
        w = self.r_hi - self.r_lo
        s = np.linspace(self.r_lo + 0.05 * w, self.r_hi - 0.05 * w, 7)
        if self.r_lo == 0.0:
            s[0] = 0.0
        q = self.P @ self._data(self.col_a, self.col_r, s)[0]
        exact = self._data(self.chk_a, self.chk_r, s)[0]
        approx = kernels.ring_eval(self.chk_a[:, None], self.chk_r[:, None], self.b[None], self.r[None], self.n)[0] @ q
        return float(np.max(np.abs(approx - exact).max(axis=0) / np.abs(exact).max(axis=0)))

    def _frame(self, X, Y):
        yt = Y - self.center
        tiny = 1e-8 * self.r_hi
        e, s = _unit(yt, tiny)
        e[s <= tiny] = np.eye(self.n)[0]
        xt = X - self.center
        a = np.sum(xt * e, axis=1)
        perp = xt - a[:, None] * e
        er, rho = _unit(perp, 1e-300)
        return e, s, a, rho, er

    def _batch(self, a, rho, Q):
        """Evaluate sum_k Q[i, k] ring_k(a_i, rho_i) with its a/rho derivatives."""
        out = np.empty((3, len(a)))
        for i in range(0, len(a), CHUNK):
            sl = slice(i, i + CHUNK)
            v, va, vr = kernels.ring_eval(a[sl, None], rho[sl, None], self.b[None], self.r[None], self.n)
            out[0, sl] = np.sum(v * Q[sl], axis=1)
            out[1, sl] = np.sum(va * Q[sl], axis=1)
            out[2, sl] = np.sum(vr * Q[sl], axis=1)
        return out

    def _H(self, X, Y):
        e, s, a, rho, er = self._frame(X, Y)
        Q = (self.P @ self._data(self.col_a, self.col_r, s)[0]).T
        return self._batch(a, rho, Q)[0]

    def _gradH(self, X, Y, swap=True):
        e, s, a, rho, er = self._frame(X, Y)
        data, ddata = self._data(self.col_a, self.col_r, s)
        Q = (self.P @ data).T
        dQ = (self.P @ ddata).T
        _, va, vr = self._batch(a, rho, Q)
        hs = self._batch(a, rho, dQ)[0]
        gx = va[:, None] * e + vr[:, None] * er
        small = s <= 1e-8 * self.r_hi
        ssafe = np.where(small, 1.0, s)
        gy = hs[:, None] * e + ((rho * va - a * vr) / ssafe)[:, None] * er
        if swap and np.any(small):
            # source at the center: use H(x, y) = H(y, x)
            gy[small] = self._gradH(Y[small], X[small], swap=False)[0]
        return gx, gy

    def extend(self, data_fn, axis_point=None, scale=0.0):
        e = np.eye(self.n)[0]
        if axis_point is not None:
            v = np.asarray(axis_point, dtype=float) - self.center
            nv = np.linalg.norm(v)
            if nv > 1e-12 * self.r_hi:
                e = v / nv
        f = np.eye(self.n)[np.argmin(np.abs(e))]
        f = f - (f @ e) * e
        f /= np.linalg.norm(f)

        def lift(a, r):
            return self.center + a[:, None] * e + r[:, None] * f

        q = self.P @ np.asarray(data_fn(lift(self.col_a, self.col_r)), dtype=float)
        exact = np.asarray(data_fn(lift(self.chk_a, self.chk_r)), dtype=float)
        approx = kernels.ring_apply(self.chk_a, self.chk_r, self.b, self.r, q, self.n)[0]
        resid = float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1e-300))
        return ring_field(self.center, e, self.b, self.r, q, self.n, resid)

    def to_dict(self):
        d = super().to_dict()
        d["params"] = {"intervals": self.intervals, "offset": self.offset}
        d["charges"] = self.charges.tolist()
        return d


class PointEngine(GreenEngine):
    """Point-charge collocation for general domains.

    The regular part is symmetrised, ``(H(x, y) + H(y, x)) / 2``, which keeps
    the exact symmetry of the continuous kernel.
    """

    scheme = "point"

    def __init__(self, domain, count, tol=1e-3, offset=POINT_OFFSET, seed=0):
        super().__init__(domain, tol)
        self.count = int(count)
        self.offset = float(offset)
        self.seed = int(seed)
        pts, nrm, area = domain.sample_boundary(self.count, seed=seed)
        h = area ** (1.0 / (self.n - 1))
        self.charges = pts + self.offset * h[:, None] * nrm
        if domain.spheres() is None:
            # mesh boundaries only offer the given panels
            self.col = pts
            self.chk = pts
        else:
            self.col = domain.sample_boundary(POINT_OVERSAMPLE * len(pts), seed=seed + 1)[0]
            self.chk = domain.sample_boundary(2 * len(pts), seed=seed + 2)[0]
        self.P = _pinv_columns(self._phi(self.col, self.charges))
        self.collocation_residual = self._probe()

    def _phi(self, X, Z):
        d = np.linalg.norm(X[:, None, :] - Z[None, :, :], axis=-1)
        return d ** (2 - self.n)

    def _gphi(self, X, Z):
        """Gradient in X of |X - Z|^(2-n), shape (len(X), len(Z), n)."""
        d = X[:, None, :] - Z[None, :, :]
        r = np.linalg.norm(d, axis=-1)
        return (2 - self.n) * r[..., None] ** (-self.n) * d

    def _weights(self, Y):
        return self.P @ (self.c_n * self._phi(self.col, Y))

    def _probe(self):
        rng = np.random.default_rng(self.seed)
        Y = self.domain.sample_interior(rng, 8, min_distance=PROBE_DEPTH * self.domain.inradius)
        exact = self.c_n * self._phi(self.chk, Y)
        approx = self._phi(self.chk, self.charges) @ self._weights(Y)
        return float(np.max(np.abs(approx - exact).max(axis=0) / np.abs(exact).max(axis=0)))

    def _raw(self, X, Y):
        out = np.empty(len(X))
        for i in range(0, len(X), CHUNK):
            sl = slice(i, i + CHUNK)
            q = self._weights(Y[sl])
            out[sl] = np.sum(self._phi(X[sl], self.charges) * q.T, axis=1)
        return out

    def _raw_grad(self, X, Y):
        gx = np.empty_like(X)
        gy = np.empty_like(X)
        for i in range(0, len(X), CHUNK // 4):
            sl = slice(i, i + CHUNK // 4)
            phi = self._phi(X[sl], self.charges)
            q = self._weights(Y[sl])
            gx[sl] = np.einsum("ikd,ki->id", self._gphi(X[sl], self.charges), q)
            dq = np.einsum("km,mid->kid", self.P, -self.c_n * self._gphi(self.col, Y[sl]))
            gy[sl] = np.einsum("ik,kid->id", phi, dq)
        return gx, gy

    def _H(self, X, Y):
        return 0.5 * (self._raw(X, Y) + self._raw(Y, X))

    def _gradH(self, X, Y):
        ax, ay = self._raw_grad(X, Y)
        bx, by = self._raw_grad(Y, X)
        return 0.5 * (ax + by), 0.5 * (ay + bx)

    def extend(self, data_fn, axis_point=None, scale=0.0):
        q = self.P @ np.asarray(data_fn(self.col), dtype=float)
        exact = np.asarray(data_fn(self.chk), dtype=float)
        approx = self._phi(self.chk, self.charges) @ q
        resid = float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1e-300))
        return point_field(self.charges, q, self.n, resid)

    def to_dict(self):
        d = super().to_dict()
        d["params"] = {"count": self.count, "offset": self.offset, "seed": self.seed}
        d["charges"] = self.charges.tolist()
        return d


class KelvinEngine(GreenEngine):
    """Ball with an off-center spherical hole, mapped to a concentric annulus.

    Inversion about the limit point of the two boundary spheres that lies
    outside the ball sends the domain onto an annulus, outer sphere to outer
    sphere. With ``w(x) = (rho/|x-p|)^(n-2)`` the regular parts obey
    ``H(x, y) = w(x) w(y) H_A(i(x), i(y))``, and a harmonic ``v`` on the
    annulus pulls back to the harmonic ``w(x) v(i(x))``.
    """

    scheme = "kelvin"

    def __init__(self, domain, intervals=RING_INTERVALS, tol=1e-7):
        super().__init__(domain, tol)
        outer = getattr(domain, "outer", None)
        if not isinstance(outer, Ball):
            raise GeometryError("inversion engine needs a ball with one spherical hole")
        c1, R1 = outer.center, outer.radius
        c2, R2 = domain.hole_center, domain.hole_radius
        d = float(np.linalg.norm(c2 - c1))
        if d <= CONCENTRIC_TOL * R1:
            raise GeometryError("hole is concentric; use the ring engine")
        axis = (c2 - c1) / d
        # limit points are the roots of d t^2 - K t + d R1^2 = 0; take the exterior one
        K = R1**2 + d**2 - R2**2
        disc = np.sqrt(K * K - 4 * d * d * R1 * R1)
        t = (K + disc) / (2 * d)
        self.p = c1 + t * axis
        self.rho2 = t * t - R1 * R1
        centers, radii = [], []
        for c, R in ((c1, R1), (c2, R2)):
            D = float(np.sum((c - self.p) ** 2) - R * R)
            centers.append(self.p + self.rho2 * (c - self.p) / D)
            radii.append(self.rho2 * R / abs(D))
        self.annulus = Annulus(centers[0], radii[1], radii[0])
        self.intervals = int(intervals)
        self.ring = RingEngine(self.annulus, self.intervals, tol)
        self.collocation_residual = self.ring.collocation_residual

    def _map(self, X):
        v = X - self.p
        r2 = np.sum(v * v, axis=1)
        iX = self.p + self.rho2 * v / r2[:, None]
        w = (self.rho2 / r2) ** ((self.n - 2) / 2)
        return iX, w, v, r2

    def _pull(self, X, g):
        """Apply the (symmetric) Jacobian of the inversion at X to vectors g."""
        _, _, v, r2 = self._map(X)
        u = v / np.sqrt(r2)[:, None]
        return (self.rho2 / r2)[:, None] * (g - 2.0 * u * np.sum(u * g, axis=1)[:, None])

    def _H(self, X, Y):
        iX, wx, _, _ = self._map(X)
        iY, wy, _, _ = self._map(Y)
        return wx * wy * self.ring._H(iX, iY)

    def _gradH(self, X, Y):
        iX, wx, vx, rx = self._map(X)
        iY, wy, vy, ry = self._map(Y)
        HA = self.ring._H(iX, iY)
        gax, gay = self.ring._gradH(iX, iY)
        m = self.n - 2
        dwx = -m * (wx / rx)[:, None] * vx
        dwy = -m * (wy / ry)[:, None] * vy
        gx = (dwx * wy[:, None]) * HA[:, None] + (wx * wy)[:, None] * self._pull(X, gax)
        gy = (dwy * wx[:, None]) * HA[:, None] + (wx * wy)[:, None] * self._pull(Y, gay)
        return gx, gy

    def extend(self, data_fn, axis_point=None, scale=0.0):
        axis = None
        if axis_point is not None:
            z = np.asarray(axis_point, dtype=float) - self.p
            den = float(z @ z + scale * scale)
            axis = self.p + self.rho2 * z / den

        def mapped_data(eta):
            iE, w, _, _ = self._map(eta)
            return np.asarray(data_fn(iE), dtype=float) * w

        inner = self.ring.extend(mapped_data, axis)
        return kelvin_field(self.p, self.rho2, inner, self.n)

    @property
    def charges(self):
        return self.ring.charges

    def to_dict(self):
        d = super().to_dict()
        d["params"] = {"intervals": self.intervals}
        d["charges"] = self.charges.tolist()
        return d


def build_engine(domain, n_boundary=None, tol=None, method="auto"):
    """Build a Green engine for ``domain``.

    ``method`` is ``"auto"`` (image formula on balls, collocation otherwise),
    ``"analytic"``, ``"collocation"`` (ring charges when the boundary is made
    of concentric spheres) or ``"point"`` (always point charges). For the
    collocation engines ``n_boundary`` is the starting resolution; it is
    doubled up to three times until the probe residual is at most ``tol``.
    """
    n = domain.n
    if n > MAX_DIM:
        raise GeometryError(f"dimension {n} is not supported (n <= {MAX_DIM})")
    if n_boundary is not None and n_boundary < 10 * n:
        raise GeometryError("n_boundary must be at least 10 n")
    if method not in ("auto", "analytic", "collocation", "point"):
        raise GeometryError(f"unknown engine method {method!r}")
    if method == "analytic" or (method == "auto" and isinstance(domain, Ball)):
        if not isinstance(domain, Ball):
            raise GeometryError("analytic engine requires a ball")
        return ImageEngine(domain)

    use_ring = method != "point" and domain.axis_center() is not None
    use_kelvin = (
        method != "point" and not use_ring and isinstance(domain, Perforated) and isinstance(domain.outer, Ball)
    )
    if use_ring or use_kelvin:
        size = n_boundary or RING_INTERVALS
        tol = 1e-7 if tol is None else tol
        cls = RingEngine if use_ring else KelvinEngine
        make = lambda m: cls(domain, m, tol)  # noqa: E731
    else:
        size = n_boundary or {3: 400, 4: 800, 5: 1200, 6: 1600}[n]
        tol = 2e-3 if tol is None else tol
        make = lambda m: PointEngine(domain, m, tol)  # noqa: E731
    best = None
    for _ in range(LADDER_STEPS + 1):
        eng = make(size)
        if eng.collocation_residual <= tol:
            return eng
        if best is None or eng.collocation_residual < best:
            best = eng.collocation_residual
        size *= 2
    raise CollocationDivergence(f"boundary residual {best:.3g} exceeds tolerance {tol:.3g}")


def engine_from_dict(d):
    """Rebuild an engine from :meth:`GreenEngine.to_dict` output.

    The weight solve is recomputed from the stored parameters and the charge
    positions are checked against the stored ones.
    """
    domain = domain_from_dict(d["domain"])
    scheme = d.get("scheme")
    if scheme == "image":
        return ImageEngine(domain)
    p = d.get("params", {})
    if scheme == "ring":
        eng = RingEngine(domain, p["intervals"], d["tol"], p["offset"])
    elif scheme == "kelvin":
        eng = KelvinEngine(domain, p["intervals"], d["tol"])
    elif scheme == "point":
        eng = PointEngine(domain, p["count"], d["tol"], p["offset"], p["seed"])
    else:
        raise GeometryError(f"unknown engine scheme {scheme!r}")
    stored = np.asarray(d.get("charges", eng.charges), dtype=float)
    if stored.shape != eng.charges.shape or not np.allclose(stored, eng.charges, rtol=0, atol=1e-12):
        raise GeometryError("stored charges do not match the rebuilt engine")
    return eng


def green(engine, x, y):
    return engine.green(x, y)


def regular_part(engine, x, y):
    return engine.regular_part(x, y)


def robin(engine, x):
    return engine.robin(x)


def grad_regular_part(engine, x, y):
    return engine.grad_regular_part(x, y)
