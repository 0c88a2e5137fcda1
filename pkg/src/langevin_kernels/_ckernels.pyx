# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

* ``em_flow``: Euler-Maruyama stochastic flow with its derivative flows for the
  tagged sigma families (0: constant, 1: flattening bump).
* ``gamma_xsin`` / ``kzk_xsin`` / ``kz_xsin``: the nested parametrix quadrature for
  bundles with a = a0 + amp sin(freq x), constant b and Y = (v + eps sin v, 0).

The algorithms mirror the numpy paths in flow_engine and parametrix_solver.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sin, cos, exp, sqrt, log, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()


# ---------------------------------------------------------------- stochastic flow

cdef inline void _sigma(int code, double p0, double p1, double x, double g,
                        double* sig, double* s1, double* s2, double* s11,
                        double* s12, double* s22) noexcept nogil:
    cdef double r, q, q2, q3
    if code == 0:
        sig[0] = p0
        s1[0] = 0.0; s2[0] = 0.0; s11[0] = 0.0; s12[0] = 0.0; s22[0] = 0.0
        return
    r = 1.0 + x * x + g * g
    q = 1.0 / r
    q2 = q * q
    q3 = q2 * q
    sig[0] = p0 + p1 * q
    s1[0] = -2.0 * p1 * x * q2
    s2[0] = -2.0 * p1 * g * q2
    s11[0] = p1 * (-2.0 * q2 + 8.0 * x * x * q3)
    s12[0] = p1 * 8.0 * x * g * q3
    s22[0] = p1 * (-2.0 * q2 + 8.0 * g * g * q3)


def em_flow(int code, double p0, double p1, const double[::1] dW, double dt,
            const double[::1] xs, const double[::1] vs):
    """Return (gamma, dv, dx, dxx, dxv, dvv), each of shape (n + 1, n_points)."""
    cdef Py_ssize_t n = dW.shape[0]
    cdef Py_ssize_t P = xs.shape[0]
    gam = np.empty((n + 1, P))
    dvo = np.empty((n + 1, P))
    dxo = np.empty((n + 1, P))
    dxxo = np.empty((n + 1, P))
    dxvo = np.empty((n + 1, P))
    dvvo = np.empty((n + 1, P))
    cdef double[:, ::1] G = gam
    cdef double[:, ::1] Odv = dvo
    cdef double[:, ::1] Odx = dxo
    cdef double[:, ::1] Odxx = dxxo
    cdef double[:, ::1] Odxv = dxvo
    cdef double[:, ::1] Odvv = dvvo
    cdef Py_ssize_t p, k
    cdef double x, g, logD, D, Ix, Ixx, Ixv, Ivv, Y, Yx, Dx, Dv, dw
    cdef double sig, s1, s2, s11, s12, s22, Fvv, Fxv, Fxx
    with nogil:
        for p in range(P):
            x = xs[p]
            g = vs[p]
            logD = 0.0; D = 1.0
            Ix = 0.0; Ixx = 0.0; Ixv = 0.0; Ivv = 0.0
            Y = 0.0; Yx = 0.0; Dx = 0.0; Dv = 0.0
            for k in range(n + 1):
                G[k, p] = g
                Odv[k, p] = D
                Odx[k, p] = Y
                Odxx[k, p] = Yx
                Odxv[k, p] = Dx
                Odvv[k, p] = Dv
                if k == n:
                    break
                dw = dW[k]
                _sigma(code, p0, p1, x, g, &sig, &s1, &s2, &s11, &s12, &s22)
                Fvv = s22 * D * D
                Fxv = (s12 + s22 * Y) * D
                Fxx = s11 + 2.0 * s12 * Y + s22 * Y * Y
                Ix = Ix + s1 / D * dw + s1 * s2 / D * dt
                Ivv = Ivv + Fvv / D * dw + s2 * Fvv / D * dt
                Ixv = Ixv + Fxv / D * dw + s2 * Fxv / D * dt
                Ixx = Ixx + Fxx / D * dw + s2 * Fxx / D * dt
                logD = logD - s2 * dw - 0.5 * s2 * s2 * dt
                g = g - sig * dw
                D = exp(logD)
                Y = -D * Ix
                Dv = -D * Ivv
                Dx = -D * Ixv
                Yx = -D * Ixx
    return gam, dvo, dxo, dxxo, dxvo, dvvo


# ---------------------------------------------------------------- parametrix

cdef struct Quad:
    int nt
    int nq
    int ncov
    int mode
    double blend
    double a0
    double amp
    double freq
    double b0
    double eps
    double* B
    double* wB
    double* gk
    double* ratio
    double* cu
    double* cw


cdef inline double _a(Quad* q, double x) noexcept nogil:
    if q.amp == 0.0:
        return q.a0
    return q.a0 + q.amp * sin(q.freq * x)


cdef inline void _cov(Quad* q, double s, double xi, double eta, double t, double* out) noexcept nogil:
    """Curve endpoint, K and frozen covariance: out = gx, gv, K, a11, a12, a22."""
    cdef double h = t - s
    cdef double y1 = eta + q.eps * sin(eta)
    cdef double kap = 1.0 + q.eps * cos(eta)
    cdef double a11 = 0.0, a12 = 0.0, a22 = 0.0, r, d, w
    cdef int j
    if q.amp == 0.0:
        a22 = q.a0 * h
        a12 = q.a0 * kap * h * h / 2.0
        a11 = q.a0 * kap * kap * h * h * h / 3.0
    else:
        for j in range(q.ncov):
            r = h * q.cu[j]
            d = (h - r) * kap
            w = h * q.cw[j] * _a(q, xi + r * y1)
            a11 += w * d * d
            a12 += w * d
            a22 += w
    out[0] = xi + h * y1
    out[1] = eta
    out[2] = h * kap
    out[3] = a11
    out[4] = a12
    out[5] = a22


cdef inline void _frozen_c(Quad* q, double x, double v, double* c, double* out) noexcept nogil:
    """Z, Z_x, Z_v, Z_vv, gx, gv from a precomputed curve/covariance record c."""
    cdef double det = c[3] * c[5] - c[4] * c[4]
    cdef double dx = x - c[0]
    cdef double dv = v - c[1]
    cdef double p11 = c[5] / det, p12 = -c[4] / det, p22 = c[3] / det
    cdef double px = p11 * dx + p12 * dv
    cdef double pv = p12 * dx + p22 * dv
    cdef double g = exp(-0.5 * (dx * px + dv * pv)) / (2.0 * M_PI * sqrt(det))
    out[0] = g
    out[1] = -g * px
    out[2] = -g * pv
    out[3] = g * (pv * pv - p22)
    out[4] = c[0]
    out[5] = c[1]


cdef inline void _frozen(Quad* q, double t, double x, double v, double s, double xi, double eta,
                         double* out) noexcept nogil:
    cdef double c[6]
    _cov(q, s, xi, eta, t, c)
    _frozen_c(q, x, v, c, out)


cdef inline double _kz_c(Quad* q, double x, double v, double* c) noexcept nogil:
    cdef double f[6]
    _frozen_c(q, x, v, c, f)
    cdef double cx = f[4], cv = f[5]
    cdef double e1
    if q.eps == 0.0:
        e1 = 0.0
    else:
        e1 = (v + q.eps * sin(v)) - (cv + q.eps * sin(cv)) - (1.0 + q.eps * cos(cv)) * (v - cv)
    return 0.5 * (_a(q, x) - _a(q, cx)) * f[3] + q.b0 * f[2] - e1 * f[1]


cdef inline double _kz(Quad* q, double t, double x, double v, double s, double xi, double eta) noexcept nogil:
    cdef double c[6]
    _cov(q, s, xi, eta, t, c)
    return _kz_c(q, x, v, c)


cdef inline void _nodes(Quad* q, int j, double t, double x, double v, double s, double xi, double eta,
                        double* rho, double* m, double* L, double* wt, double* cr) noexcept nogil:
    """Time node j: rho, proposal mean m[2], Cholesky L[3], time weight and the
    pole's curve/covariance record up to rho (shared by every space node)."""
    cdef double h = t - s
    cdef double r = s + h * q.B[j]
    cdef double bx = x + (r - t) * (v + q.eps * sin(v))
    cdef double bv = v
    cdef double cl[6]
    _cov(q, r, bx, bv, t, cl)
    _cov(q, s, xi, eta, r, cr)
    cdef double Kf = cl[2]
    cdef double l11 = cl[3] - 2.0 * Kf * cl[4] + Kf * Kf * cl[5]
    cdef double l12 = cl[4] - Kf * cl[5]
    cdef double l22 = cl[5]
    cdef double r11 = cr[3], r12 = cr[4], r22 = cr[5]
    cdef double c11, c12, c22, mx, mv, dl, dr, q11, q12, q22, dq, hx, hv
    if q.mode == 0:
        dl = l11 * l22 - l12 * l12
        dr = r11 * r22 - r12 * r12
        q11 = l22 / dl + r22 / dr
        q12 = -l12 / dl - r12 / dr
        q22 = l11 / dl + r11 / dr
        dq = q11 * q22 - q12 * q12
        c11 = q22 / dq
        c12 = -q12 / dq
        c22 = q11 / dq
        hx = (l22 * bx - l12 * bv) / dl + (r22 * cr[0] - r12 * cr[1]) / dr
        hv = (-l12 * bx + l11 * bv) / dl + (-r12 * cr[0] + r11 * cr[1]) / dr
        mx = c11 * hx + c12 * hv
        mv = c12 * hx + c22 * hv
    else:
        c11 = q.blend * r11 + (1.0 - q.blend) * l11
        c12 = q.blend * r12 + (1.0 - q.blend) * l12
        c22 = q.blend * r22 + (1.0 - q.blend) * l22
        mx = bx
        mv = bv
    L[0] = sqrt(c11)
    L[1] = c12 / L[0]
    L[2] = sqrt(c22 - L[1] * L[1])
    m[0] = mx
    m[1] = mv
    rho[0] = r
    wt[0] = h * q.wB[j]


cdef double _phi(Quad* q, int order, double t, double x, double v, double s, double xi, double eta,
                 double* cb) noexcept nogil:
    """(KZ)_1 + ... + (KZ)_order; cb is the pole's record up to t when known."""
    cdef double acc
    if cb != NULL:
        acc = _kz_c(q, x, v, cb)
    else:
        acc = _kz(q, t, x, v, s, xi, eta)
    if order <= 1:
        return acc
    cdef int j, i, k
    cdef double r, wt, W, ex, ev
    cdef double m[2]
    cdef double L[3]
    cdef double cr[6]
    for j in range(q.nt):
        _nodes(q, j, t, x, v, s, xi, eta, &r, m, L, &wt, cr)
        for i in range(q.nq):
            for k in range(q.nq):
                ex = m[0] + L[0] * q.gk[i]
                ev = m[1] + L[1] * q.gk[i] + L[2] * q.gk[k]
                W = wt * L[0] * L[2] * q.ratio[i * q.nq + k]
                acc += W * _kz(q, t, x, v, r, ex, ev) * _phi(q, order - 1, r, ex, ev, s, xi, eta, cr)
    return acc


cdef double _kzk(Quad* q, int order, double t, double x, double v, double s, double xi, double eta,
                 double* cb) noexcept nogil:
    if order <= 1:
        if cb != NULL:
            return _kz_c(q, x, v, cb)
        return _kz(q, t, x, v, s, xi, eta)
    cdef int j, i, k
    cdef double r, wt, W, ex, ev, acc = 0.0
    cdef double m[2]
    cdef double L[3]
    cdef double cr[6]
    for j in range(q.nt):
        _nodes(q, j, t, x, v, s, xi, eta, &r, m, L, &wt, cr)
        for i in range(q.nq):
            for k in range(q.nq):
                ex = m[0] + L[0] * q.gk[i]
                ev = m[1] + L[1] * q.gk[i] + L[2] * q.gk[k]
                W = wt * L[0] * L[2] * q.ratio[i * q.nq + k]
                acc += W * _kz(q, t, x, v, r, ex, ev) * _kzk(q, order - 1, r, ex, ev, s, xi, eta, cr)
    return acc


cdef void _gamma(Quad* q, int order, double t, double x, double v, double s, double xi, double eta,
                 double* out) noexcept nogil:
    cdef double f[6]
    _frozen(q, t, x, v, s, xi, eta, f)
    out[0] = f[0]
    out[1] = f[2]
    out[2] = f[3]
    if order <= 0:
        return
    cdef int j, i, k
    cdef double r, wt, W, ex, ev, ph
    cdef double m[2]
    cdef double L[3]
    cdef double cr[6]
    for j in range(q.nt):
        _nodes(q, j, t, x, v, s, xi, eta, &r, m, L, &wt, cr)
        for i in range(q.nq):
            for k in range(q.nq):
                ex = m[0] + L[0] * q.gk[i]
                ev = m[1] + L[1] * q.gk[i] + L[2] * q.gk[k]
                W = wt * L[0] * L[2] * q.ratio[i * q.nq + k]
                ph = W * _phi(q, order, r, ex, ev, s, xi, eta, cr)
                _frozen(q, t, x, v, r, ex, ev, f)
                out[0] += ph * f[0]
                out[1] += ph * f[2]
                out[2] += ph * f[3]


cdef class _QuadHolder:
    cdef Quad q
    cdef object keep

    def __init__(self, const double[::1] params, const double[::1] B, const double[::1] wB, const double[::1] gk, const double[::1] gw,
                 const double[::1] cu, const double[::1] cw, int mode, double blend):
        nq = gk.shape[0]
        g = np.asarray(gk)
        w = np.asarray(gw)
        ratio = np.ascontiguousarray(
            (np.outer(w, w) * 2.0 * np.pi * np.exp(0.5 * (g[:, None] ** 2 + g[None, :] ** 2))).ravel())
        arrays = [np.ascontiguousarray(a, dtype=float) for a in (B, wB, gk, ratio, cu, cw)]
        self.keep = arrays
        cdef double[::1] aB = arrays[0]
        cdef double[::1] awB = arrays[1]
        cdef double[::1] agk = arrays[2]
        cdef double[::1] ar = arrays[3]
        cdef double[::1] acu = arrays[4]
        cdef double[::1] acw = arrays[5]
        self.q.nt = B.shape[0]
        self.q.nq = nq
        self.q.ncov = cu.shape[0]
        self.q.mode = mode
        self.q.blend = blend
        self.q.a0 = params[0]
        self.q.amp = params[1]
        self.q.freq = params[2]
        self.q.b0 = params[3]
        self.q.eps = params[4]
        self.q.B = &aB[0]
        self.q.wB = &awB[0]
        self.q.gk = &agk[0]
        self.q.ratio = &ar[0]
        self.q.cu = &acu[0]
        self.q.cw = &acw[0]


def gamma_xsin(const double[::1] params, const double[::1] B, const double[::1] wB, const double[::1] gk, const double[::1] gw,
               const double[::1] cu, const double[::1] cw, int mode, double blend, int threads, int order,
               const double[::1] t, const double[::1] x, const double[::1] v, const double[::1] s, const double[::1] xi, const double[::1] eta):
    """Truncated parametrix series (value, dv, dvv) at each target."""
    holder = _QuadHolder(params, B, wB, gk, gw, cu, cw, mode, blend)
    cdef Quad* q = &(<_QuadHolder>holder).q
    cdef Py_ssize_t n = t.shape[0], i
    val = np.empty(n)
    dv = np.empty(n)
    dvv = np.empty(n)
    cdef double[::1] o0 = val
    cdef double[::1] o1 = dv
    cdef double[::1] o2 = dvv
    cdef int nth = max(1, threads)
    for i in prange(n, nogil=True, num_threads=nth, schedule="dynamic"):
        _gamma_into(q, order, t[i], x[i], v[i], s[i], xi[i], eta[i], &o0[i], &o1[i], &o2[i])
    return val, dv, dvv


cdef inline void _gamma_into(Quad* q, int order, double t, double x, double v, double s, double xi, double eta,
                             double* a, double* b, double* c) noexcept nogil:
    cdef double out[3]
    _gamma(q, order, t, x, v, s, xi, eta, out)
    a[0] = out[0]
    b[0] = out[1]
    c[0] = out[2]


def kzk_xsin(const double[::1] params, const double[::1] B, const double[::1] wB, const double[::1] gk, const double[::1] gw,
             const double[::1] cu, const double[::1] cw, int mode, double blend, int threads, int order,
             const double[::1] t, const double[::1] x, const double[::1] v, const double[::1] s, const double[::1] xi, const double[::1] eta):
    """The iterated kernel (KZ)_order at each target."""
    holder = _QuadHolder(params, B, wB, gk, gw, cu, cw, mode, blend)
    cdef Quad* q = &(<_QuadHolder>holder).q
    cdef Py_ssize_t n = t.shape[0], i
    res = np.empty(n)
    cdef double[::1] o = res
    cdef int nth = max(1, threads)
    for i in prange(n, nogil=True, num_threads=nth, schedule="dynamic"):
        o[i] = _kzk(q, order, t[i], x[i], v[i], s[i], xi[i], eta[i], NULL)
    return res


def kz_xsin(const double[::1] params, const double[::1] cu, const double[::1] cw,
            const double[::1] t, const double[::1] x, const double[::1] v, const double[::1] s, const double[::1] xi, const double[::1] eta):
    """(KZ)_1 at each point; used by the benchmark."""
    dummy = np.zeros(8)
    holder = _QuadHolder(params, dummy, dummy, dummy, dummy, cu, cw, 0, 0.0)
    cdef Quad* q = &(<_QuadHolder>holder).q
    cdef Py_ssize_t n = t.shape[0], i
    res = np.empty(n)
    cdef double[::1] o = res
    with nogil:
        for i in range(n):
            o[i] = _kz(q, t[i], x[i], v[i], s[i], xi[i], eta[i])
    return res
