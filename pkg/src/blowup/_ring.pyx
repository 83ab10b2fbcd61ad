# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ring kernels. Same contract as ``_ring_py``.

Complete elliptic integrals are evaluated with the arithmetic-geometric mean
so the module has no dependency beyond libm.
"""

import numpy as np

from libc.math cimport sqrt, log, fabs, M_PI

cdef double T_SPLIT = 0.3
cdef int N_SERIES = 18
# series coefficients c_j of F = sum c_j t^(2j), rows n = 3..6
cdef double COEF[4][19]


def _fill_coef():
    params = ((0.25, 0.75, 1.0), (0.5, 1.0, 1.5), (0.75, 1.25, 2.0), (1.0, 1.5, 2.5))
    cdef int i, j
    for i in range(4):
        ha, hb, hc = params[i]
        COEF[i][0] = 1.0
        for j in range(N_SERIES):
            COEF[i][j + 1] = COEF[i][j] * (ha + j) * (hb + j) / ((hc + j) * (j + 1))


_fill_coef()


cdef inline void _agm_KE(double m1, double* K, double* E) noexcept nogil:
    # K(m), E(m) with m = 1 - m1
    cdef double a = 1.0
    cdef double b = sqrt(m1)
    cdef double c
    cdef double an
    cdef double p = 0.5
    cdef double s = 0.5 * (1.0 - m1)
    cdef int it
    for it in range(60):
        c = 0.5 * (a - b)
        an = 0.5 * (a + b)
        b = sqrt(a * b)
        a = an
        p *= 2.0
        s += p * c * c
        # convergence is quadratic: the next c is about c^2 / (4a)
        if fabs(c) <= 1e-10 * a:
            break
    K[0] = M_PI / (2.0 * a)
    E[0] = K[0] * (1.0 - s)


cdef inline void _hyp(int n, double t, double omt, double* F, double* dF) noexcept nogil:
    cdef double z, zp, dFdz, at, F4, dF4, it, w
    cdef double m1, m, K, E, dm, dK, dE, s, N, dN, pre, dpre
    cdef int j
    if t < T_SPLIT:
        z = t * t
        # forward sum, stopping once terms drop below round-off
        F[0] = 1.0
        dFdz = 0.0
        zp = 1.0
        for j in range(1, N_SERIES + 1):
            dFdz += j * COEF[n - 3][j] * zp
            zp *= z
            F[0] += COEF[n - 3][j] * zp
            if zp < 1e-17:
                break
        dF[0] = 2.0 * t * dFdz
        return
    if n == 4 or n == 6:
        it = 1.0 / t
        w = 1.0 / (omt * (1.0 + t))
        at = 0.5 * log((1.0 + t) * (1.0 + t) * w)
        F4 = at * it
        dF4 = (t * w - at) * it * it
        if n == 4:
            F[0] = F4
            dF[0] = dF4
            return
        F[0] = 3.0 * (F4 - 1.0) * it * it
        dF[0] = 3.0 * dF4 * it * it - 6.0 * (F4 - 1.0) * it * it * it
        return
    m1 = omt / (1.0 + t)
    m = 1.0 - m1
    _agm_KE(m1, &K, &E)
    dm = 2.0 / ((1.0 + t) * (1.0 + t))
    dK = (E - m1 * K) / (2.0 * m * m1)
    s = sqrt(1.0 + t)
    if n == 3:
        F[0] = 2.0 / M_PI * K / s
        dF[0] = 2.0 / M_PI * (dK * dm / s - 0.5 * K / (s * s * s))
        return
    dE = (E - K) / (2.0 * m)
    N = K - (1.0 + t) * E
    dN = dK * dm - E - (1.0 + t) * dE * dm
    pre = 8.0 / (M_PI * t * t * s)
    dpre = pre * (-2.0 / t - 0.5 / (1.0 + t))
    F[0] = pre * N
    dF[0] = dpre * N + pre * dN


cdef inline void _ring(int n, double a, double rho, double b, double r,
                       double* v, double* va, double* vr) noexcept nogil:
    cdef double da = a - b
    cdef double dr = rho - r
    cdef double delta2 = da * da + dr * dr
    cdef double A = delta2 + 2.0 * rho * r
    cdef double iA = 1.0 / A
    cdef double t = 2.0 * rho * r * iA
    cdef double alpha = 0.5 * (n - 2)
    cdef double F, dF, Aa, pre
    _hyp(n, t, delta2 * iA, &F, &dF)
    if n == 3:
        Aa = sqrt(iA)
    elif n == 4:
        Aa = iA
    elif n == 5:
        Aa = iA * sqrt(iA)
    else:
        Aa = iA * iA
    v[0] = Aa * F
    pre = 2.0 * Aa * iA
    va[0] = pre * da * (-alpha * F - t * dF)
    vr[0] = pre * (-alpha * F * rho + dF * (r - t * rho))


def _check_dim(int n):
    if n < 3 or n > 6:
        raise ValueError(f"ring kernels support 3 <= n <= 6, got {n}")


def ring_eval(a, rho, b, r, int n):
    """Elementwise ring kernel and its derivatives in ``a`` and ``rho``."""
    _check_dim(n)
    A, R, B, RR = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (a, rho, b, r)))
    shape = A.shape
    cdef double[::1] fa = np.ascontiguousarray(A).ravel()
    cdef double[::1] fr = np.ascontiguousarray(R).ravel()
    cdef double[::1] fb = np.ascontiguousarray(B).ravel()
    cdef double[::1] frr = np.ascontiguousarray(RR).ravel()
    cdef Py_ssize_t size = fa.shape[0]
    out = np.empty((3, size))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            _ring(n, fa[i], fr[i], fb[i], frr[i], &o[0, i], &o[1, i], &o[2, i])
    return out[0].reshape(shape), out[1].reshape(shape), out[2].reshape(shape)


def ring_apply(a, rho, b, r, q, int n):
    """Sum ``q_k * ring_k(x_i)`` over rings; returns value, d/da, d/drho."""
    _check_dim(n)
    cdef double[::1] fa = np.ascontiguousarray(a, dtype=np.float64).ravel()
    cdef double[::1] fr = np.ascontiguousarray(rho, dtype=np.float64).ravel()
    cdef double[::1] fb = np.ascontiguousarray(b, dtype=np.float64).ravel()
    cdef double[::1] frr = np.ascontiguousarray(r, dtype=np.float64).ravel()
    cdef double[::1] fq = np.ascontiguousarray(q, dtype=np.float64).ravel()
    cdef Py_ssize_t M = fa.shape[0]
    cdef Py_ssize_t K = fb.shape[0]
    if fa.shape[0] != fr.shape[0] or fb.shape[0] != frr.shape[0] or fq.shape[0] != K:
        raise ValueError("inconsistent ring_apply input sizes")
    out = np.zeros((3, M))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k
    cdef double v, va, vr, sv, sa, sr
    with nogil:
        for i in range(M):
            sv = 0.0
            sa = 0.0
            sr = 0.0
            for k in range(K):
                _ring(n, fa[i], fr[i], fb[k], frr[k], &v, &va, &vr)
                sv += fq[k] * v
                sa += fq[k] * va
                sr += fq[k] * vr
            o[0, i] = sv
            o[1, i] = sa
            o[2, i] = sr
    return out[0], out[1], out[2]
