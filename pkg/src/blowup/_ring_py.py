"""Pure numpy/scipy ring kernels (fallback for the compiled ``_ring`` module).

A *ring* is the orbit of a point ``(b, r)`` of the meridian half-plane under
rotations about the symmetry axis; in ``R^n`` it is an ``(n-2)``-sphere of
radius ``r``. The ring kernel is the average of ``|x - s|^(2-n)`` over the
ring, written as ``A^(-alpha) F(t)`` with ``A = (a-b)^2 + rho^2 + r^2``,
``t = 2 rho r / A``, ``alpha = (n-2)/2`` and
``F = 2F1(alpha/2, (alpha+1)/2; (n-1)/2; t^2)``.
"""

import numpy as np
from scipy.special import ellipe, ellipkm1

# (a, b, c) of the hypergeometric function, per dimension
HYP_PARAMS = {3: (0.25, 0.75, 1.0), 4: (0.5, 1.0, 1.5), 5: (0.75, 1.25, 2.0), 6: (1.0, 1.5, 2.5)}
T_SPLIT = 0.3
N_SERIES = 18
CHUNK = 4096


def _series(n, t):
    a, b, c = HYP_PARAMS[n]
    z = t * t
    F = np.ones_like(t)
    dFdz = np.zeros_like(t)
    coef = 1.0
    zp = np.ones_like(t)
    for j in range(N_SERIES):
        nxt = coef * (a + j) * (b + j) / ((c + j) * (j + 1))
        dFdz += nxt * (j + 1) * zp
        zp = zp * z
        F += nxt * zp
        coef = nxt
    return F, 2.0 * t * dFdz


def _closed(n, t, omt):
    """F and dF/dt for t >= T_SPLIT; ``omt`` is 1 - t computed without cancellation."""
    if n in (4, 6):
        at = 0.5 * np.log((1.0 + t) / omt)
        F4 = at / t
        dF4 = (t / (omt * (1.0 + t)) - at) / (t * t)
        if n == 4:
            return F4, dF4
        t2 = t * t
        return 3.0 * (F4 - 1.0) / t2, 3.0 * dF4 / t2 - 6.0 * (F4 - 1.0) / (t2 * t)
    m1 = omt / (1.0 + t)
    m = 1.0 - m1
    K = ellipkm1(m1)
    E = ellipe(m)
    dm = 2.0 / (1.0 + t) ** 2
    dK = (E - m1 * K) / (2.0 * m * m1)
    s = np.sqrt(1.0 + t)
    if n == 3:
        F = 2.0 / np.pi * K / s
        dF = 2.0 / np.pi * (dK * dm / s - 0.5 * K / (s * s * s))
        return F, dF
    dE = (E - K) / (2.0 * m)
    N = K - (1.0 + t) * E
    dN = dK * dm - E - (1.0 + t) * dE * dm
    pre = 8.0 / (np.pi * t * t * s)
    dpre = pre * (-2.0 / t - 0.5 / (1.0 + t))
    return pre * N, dpre * N + pre * dN


def hyp_factor(n, t, omt):
    """Return ``F(t), F'(t)`` for arrays ``t`` in [0, 1) with ``omt = 1 - t``."""
    t = np.asarray(t, dtype=float)
    omt = np.asarray(omt, dtype=float)
    F = np.empty_like(t)
    dF = np.empty_like(t)
    small = t < T_SPLIT
    if small.any():
        F[small], dF[small] = _series(n, t[small])
    big = ~small
    if big.any():
        F[big], dF[big] = _closed(n, t[big], omt[big])
    return F, dF


def ring_eval(a, rho, b, r, n):
    """Elementwise ring kernel and its derivatives in the field coordinates.

    Returns ``(value, d/da, d/drho)`` broadcast over the inputs.
    """
    a, rho, b, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, rho, b, r)))
    da = a - b
    dr = rho - r
    delta2 = da * da + dr * dr
    A = delta2 + 2.0 * rho * r
    t = 2.0 * rho * r / A
    F, dF = hyp_factor(n, t.ravel(), (delta2 / A).ravel())
    F = F.reshape(t.shape)
    dF = dF.reshape(t.shape)
    alpha = 0.5 * (n - 2)
    Aa = A ** (-alpha)
    v = Aa * F
    pre = 2.0 * Aa / A
    va = pre * da * (-alpha * F - t * dF)
    vr = pre * (-alpha * F * rho + dF * (r - t * rho))
    return v, va, vr


def ring_apply(a, rho, b, r, q, n):
    """Sum ``q_k * ring_k(x_i)`` over rings for every field point.

    ``a, rho`` have shape (M,), ``b, r, q`` shape (K,). Returns three (M,)
    arrays: value and derivatives in ``a`` and ``rho``.
    """
    a = np.asarray(a, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    M = a.size
    out = np.empty((3, M))
    step = max(1, CHUNK * 64 // max(b.size, 1))
    for s in range(0, M, step):
        sl = slice(s, s + step)
        v, va, vr = ring_eval(a[sl, None], rho[sl, None], b[None, :], r[None, :], n)
        out[0, sl] = v @ q
        out[1, sl] = va @ q
        out[2, sl] = vr @ q
    return out[0], out[1], out[2]
