"""Frozen-coefficient parametrix and its correction series.

For an operator ``K = a/2 d_vv + b d_v - <Y, grad> - d_t`` the parametrix Z is
the Gaussian transition density of the linearisation of K along the integral
curve of Y issued from the pole. The fundamental solution is recovered as

    Gamma = Z + int_s^t int Z(t, z; r, w) phi(r, w; s, zeta) dw dr,
    phi   = sum_k (KZ)_k,  (KZ)_{k+1} = (KZ)_1 (x) (KZ)_k,

truncated after ``series_order`` terms. The space-time convolutions are
evaluated by nested quadrature. In time, a polynomial substitution clusters
nodes at both endpoints, where the factors are singular. In space,
Gauss-Hermite nodes come from a Gaussian proposal fitted to the two factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .coefficients import KolmogorovCoefficients
from .errors import DomainError, QuadratureBudgetError
from .flow_engine import _rk4_moments, curve_and_covariance
from .geometry import PhasePoint

__all__ = [
    "ParametrixConfig",
    "KernelEvaluation",
    "parametrix_Z",
    "apply_K_to_Z",
    "iterated_kernels",
    "fundamental_solution",
    "fundamental_solution_batch",
    "parametrix_batch",
    "kz_batch",
]

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ParametrixConfig:
    """Series truncation and quadrature settings.

    ``proposal`` picks the Gaussian used to place space nodes: "product" fits
    the product of the two factor Gaussians, "blend" centres at the backward
    curve with covariance ``blend * right + (1 - blend) * left``.
    ``time_rule`` is "symmetric" (clusters at both ends) or "one-sided".
    """

    series_order: int = 2
    time_quad_nodes: int = 8
    space_quad_order: int = 8
    alpha: float | None = None
    cov_nodes: int = 8
    proposal: str = "product"
    blend: float = 0.5
    time_rule: str = "one-sided"
    max_evaluations: float = 5e8
    chunk_elements: int = 1 << 20
    threads: int = 1
    backend: str = "auto"

    def __post_init__(self):
        if self.series_order < 0:
            raise DomainError("series_order must be non-negative")
        if self.time_quad_nodes < 8 or self.space_quad_order < 8:
            raise DomainError("quadrature orders must be at least 8")
        if self.cov_nodes < 2:
            raise DomainError("cov_nodes must be at least 2")
        if self.proposal not in ("product", "blend"):
            raise DomainError(f"unknown proposal {self.proposal!r}")
        if not 0.0 <= self.blend <= 1.0:
            raise DomainError("blend must lie in [0, 1]")
        if self.time_rule not in ("symmetric", "one-sided"):
            raise DomainError(f"unknown time rule {self.time_rule!r}")
        if self.backend not in ("auto", "compiled", "python"):
            raise DomainError(f"unknown backend {self.backend!r}")

    def exponent(self, c: KolmogorovCoefficients) -> float:
        alpha = self.alpha if self.alpha is not None else (c.alpha or 0.5)
        if not 0 < alpha <= 1:
            raise DomainError("alpha must lie in (0, 1]")
        return 2.0 / alpha

    def evaluations_per_target(self, order: int | None = None) -> float:
        n = self.series_order if order is None else order
        return float(self.time_quad_nodes * self.space_quad_order**2) ** n


@dataclass(frozen=True)
class KernelEvaluation:
    """Kernel value with its first and second v-derivatives and provenance."""

    value: float
    dv: float
    dvv: float
    order: str


# ---------------------------------------------------------------- quadrature rules


@lru_cache(maxsize=32)
def _time_rule(n: int, p: float, symmetric: bool):
    u, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1.0)
    w = 0.5 * w
    if symmetric:
        up, vp = u**p, (1.0 - u) ** p
        den = up + vp
        B = up / den
        dB = p * u ** (p - 1) * (1.0 - u) ** (p - 1) / den**2
    else:
        B = u**p
        dB = p * u ** (p - 1)
    return B, dB * w


@lru_cache(maxsize=32)
def _space_rule(n: int):
    k, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / math.sqrt(_TWO_PI)
    u1, u2 = np.meshgrid(k, k, indexing="ij")
    wt = np.outer(w, w).ravel()
    u1 = u1.ravel()
    u2 = u2.ravel()
    # weights divided by the standard normal density, ready for integrand / proposal
    ratio = wt * _TWO_PI * np.exp(0.5 * (u1 * u1 + u2 * u2))
    return u1, u2, ratio


# ---------------------------------------------------------------- frozen Gaussian


def _frozen(c, t, x, v, s, xi, eta, n_cov):
    """Z, dZ/dx, dZ/dv, d2Z/dv2 and the curve endpoint, vectorised."""
    gx, gv, _, a11, a12, a22 = curve_and_covariance(c, s, xi, eta, t, n_cov)
    det = a11 * a22 - a12 * a12
    if not np.all(det > 0):
        raise DomainError("parametrix covariance is not positive definite")
    dx = x - gx
    dv = v - gv
    p11 = a22 / det
    p12 = -a12 / det
    p22 = a11 / det
    px = p11 * dx + p12 * dv
    pv = p12 * dx + p22 * dv
    g = np.exp(-0.5 * (dx * px + dv * pv)) / (_TWO_PI * np.sqrt(det))
    return g, -g * px, -g * pv, g * (pv * pv - p22), gx, gv


def _kz(c, t, x, v, s, xi, eta, n_cov):
    """(KZ)_1 = (a(z) - a(gamma))/2 Z_vv + b(z) Z_v - <Y(z) - Ybar(z), grad Z>."""
    g, zx, zv, zvv, cx, cv = _frozen(c, t, x, v, s, xi, eta, n_cov)
    t = np.broadcast_to(t, g.shape)
    az = c.a(t, x, v)
    ag = c.a(t, cx, cv)
    bz = c.b(t, x, v)
    y1z, y2z = c.drift(t, x, v)
    y1g, y2g = c.drift(t, cx, cv)
    kap = c.kappa(t, cx, cv)
    # Ybar is the linearisation along the curve: Y(gamma) + [[0, kappa], [0, 0]] (z - gamma)
    e1 = y1z - y1g - kap * (v - cv)
    e2 = y2z - y2g
    return 0.5 * (az - ag) * zvv + bz * zv - (e1 * zx + e2 * zv)


def _curve_only(c, s, x, v, t):
    if c.flow_map is not None:
        gx, gv, K = c.flow_map(s, x, v, t)
        return gx, gv, K
    gx, gv, K, *_ = _rk4_moments(c, *np.broadcast_arrays(s, x, v, t))
    return gx, gv, K


# ---------------------------------------------------------------- convolution


class _Convolver:
    """Nested space-time convolution with per-call scratch only."""

    def __init__(self, c: KolmogorovCoefficients, cfg: ParametrixConfig):
        self.c = c
        self.cfg = cfg
        self.B, self.wB = _time_rule(cfg.time_quad_nodes, cfg.exponent(c), cfg.time_rule == "symmetric")
        self.u1, self.u2, self.ratio = _space_rule(cfg.space_quad_order)
        self.n_cov = cfg.cov_nodes
        self.nodes = cfg.time_quad_nodes * cfg.space_quad_order**2

    def nodes_for(self, t, x, v, s, xi, eta):
        """Quadrature nodes (rho, w) and weights for targets (t, z) and poles (s, zeta)."""
        c, cfg = self.c, self.cfg
        h = (t - s)[:, None]
        rho = s[:, None] + h * self.B
        wt = h * self.wB
        # left factor as a function of w: Gaussian around the backward curve
        bx, bv, _ = _curve_only(c, t[:, None], x[:, None], v[:, None], rho)
        _, _, Kf, a11, a12, a22 = curve_and_covariance(c, rho, bx, bv, t[:, None], self.n_cov)
        l11 = a11 - 2 * Kf * a12 + Kf * Kf * a22
        l12 = a12 - Kf * a22
        l22 = a22
        # right factor: Gaussian around the forward curve of the pole
        gx, gv, _, r11, r12, r22 = curve_and_covariance(c, s[:, None], xi[:, None], eta[:, None], rho,
                                                        self.n_cov)
        if cfg.proposal == "product":
            dl = l11 * l22 - l12 * l12
            dr = r11 * r22 - r12 * r12
            q11 = l22 / dl + r22 / dr
            q12 = -l12 / dl - r12 / dr
            q22 = l11 / dl + r11 / dr
            dq = q11 * q22 - q12 * q12
            c11, c12, c22 = q22 / dq, -q12 / dq, q11 / dq
            hx = (l22 * bx - l12 * bv) / dl + (r22 * gx - r12 * gv) / dr
            hv = (-l12 * bx + l11 * bv) / dl + (-r12 * gx + r11 * gv) / dr
            mx = c11 * hx + c12 * hv
            mv = c12 * hx + c22 * hv
        else:
            w = cfg.blend
            c11 = w * r11 + (1 - w) * l11
            c12 = w * r12 + (1 - w) * l12
            c22 = w * r22 + (1 - w) * l22
            mx, mv = bx, bv
        L11 = np.sqrt(c11)
        L21 = c12 / L11
        L22 = np.sqrt(np.maximum(c22 - L21 * L21, 0.0))
        if not np.all(L22 > 0):
            raise DomainError("degenerate space proposal")
        ex = mx[..., None] + L11[..., None] * self.u1
        ev = mv[..., None] + L21[..., None] * self.u1 + L22[..., None] * self.u2
        W = (wt * L11 * L22)[..., None] * self.ratio
        rr = np.broadcast_to(rho[..., None], ex.shape)
        return rr, ex, ev, W

    def convolve(self, t, x, v, s, xi, eta, left, right, right_cost: float):
        """sum over nodes of W * left(t, z; rho, w) * right(rho, w; s, zeta), per left component."""
        rr, ex, ev, W = self.nodes_for(t, x, v, s, xi, eta)
        M = t.size
        tt = np.broadcast_to(t[:, None, None], ex.shape)
        lvals = left(tt, np.broadcast_to(x[:, None, None], ex.shape), np.broadcast_to(v[:, None, None], ex.shape),
                     rr, ex, ev)
        ss = np.broadcast_to(s[:, None, None], ex.shape).ravel()
        px = np.broadcast_to(xi[:, None, None], ex.shape).ravel()
        pv = np.broadcast_to(eta[:, None, None], ex.shape).ravel()
        flat = (rr.ravel(), ex.ravel(), ev.ravel())
        n = flat[0].size
        step = max(1, int(self.cfg.chunk_elements // max(1.0, right_cost)))
        rvals = np.empty(n)
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            rvals[lo:hi] = right(flat[0][lo:hi], flat[1][lo:hi], flat[2][lo:hi], ss[lo:hi], px[lo:hi], pv[lo:hi])
        rvals = rvals.reshape(ex.shape)
        return tuple(np.sum((W * lv * rvals).reshape(M, -1), axis=1) for lv in lvals)

    # -- kernels

    def kz(self, t, x, v, s, xi, eta):
        return _kz(self.c, t, x, v, s, xi, eta, self.n_cov)

    def phi(self, order, t, x, v, s, xi, eta):
        """Partial sum (KZ)_1 + ... + (KZ)_order at flat arrays."""
        base = self.kz(t, x, v, s, xi, eta)
        if order <= 1:
            return base
        cost = float(self.nodes) ** (order - 1)

        def left(*a):
            return (self.kz(*a),)

        def right(*a):
            return self.phi(order - 1, *a)

        (corr,) = self.convolve(t, x, v, s, xi, eta, left, right, cost)
        return base + corr

    def kz_k(self, k, t, x, v, s, xi, eta):
        """The single iterated kernel (KZ)_k."""
        if k <= 1:
            return self.kz(t, x, v, s, xi, eta)
        cost = float(self.nodes) ** (k - 1)

        def left(*a):
            return (self.kz(*a),)

        def right(*a):
            return self.kz_k(k - 1, *a)

        return self.convolve(t, x, v, s, xi, eta, left, right, cost)[0]

    def gamma(self, order, t, x, v, s, xi, eta):
        g, _, zv, zvv, _, _ = _frozen(self.c, t, x, v, s, xi, eta, self.n_cov)
        if order == 0:
            return g, zv, zvv
        cost = float(self.nodes) ** order

        def left(tt, xx, vv, rr, ex, ev):
            z, _, dzv, dzvv, _, _ = _frozen(self.c, tt, xx, vv, rr, ex, ev, self.n_cov)
            return z, dzv, dzvv

        def right(*a):
            return self.phi(order, *a)

        c0, c1, c2 = self.convolve(t, x, v, s, xi, eta, left, right, cost)
        return g + c0, zv + c1, zvv + c2


# ---------------------------------------------------------------- public API


def _flat(*arrs):
    b = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in arrs))
    return b[0].shape, [np.ascontiguousarray(a).ravel() for a in b]


def _check_times(t, s):
    if not np.all(s < t):
        raise DomainError("kernel evaluation needs s < t")


def _use_compiled(c: KolmogorovCoefficients, cfg: ParametrixConfig) -> bool:
    tagged = c.kernel_tag is not None and c.kernel_tag[0] == "xsin"
    if cfg.backend == "python":
        return False
    if cfg.backend == "compiled":
        if not (_backend.HAVE_COMPILED and tagged):
            raise DomainError("compiled kernels unavailable for this coefficient bundle")
        return True
    return _backend.HAVE_COMPILED and tagged


def _budget(cfg: ParametrixConfig, order: int, n_targets: int):
    per = cfg.evaluations_per_target(order)
    if per > cfg.max_evaluations:
        raise QuadratureBudgetError(
            f"{per:.3g} kernel evaluations per target exceed the budget {cfg.max_evaluations:.3g}"
        )


def parametrix_batch(c: KolmogorovCoefficients, t, x, v, s, xi, eta, n_cov: int = 8):
    """Vectorised (Z, dZ/dx, dZ/dv, d2Z/dv2)."""
    shape, (t, x, v, s, xi, eta) = _flat(t, x, v, s, xi, eta)
    _check_times(t, s)
    g, zx, zv, zvv, _, _ = _frozen(c, t, x, v, s, xi, eta, n_cov)
    return tuple(a.reshape(shape) for a in (g, zx, zv, zvv))


def kz_batch(c: KolmogorovCoefficients, t, x, v, s, xi, eta, n_cov: int = 8):
    shape, (t, x, v, s, xi, eta) = _flat(t, x, v, s, xi, eta)
    _check_times(t, s)
    return _kz(c, t, x, v, s, xi, eta, n_cov).reshape(shape)


def parametrix_Z(c: KolmogorovCoefficients, t: float, z: PhasePoint, s: float, zeta: PhasePoint,
                 n_cov: int = 8) -> KernelEvaluation:
    """The frozen Gaussian Z(t, z; s, zeta) with exact v-derivatives."""
    if not s < t:
        raise DomainError("parametrix needs s < t")
    g, _, zv, zvv = parametrix_batch(c, t, z.x, z.v, s, zeta.x, zeta.v, n_cov)
    return KernelEvaluation(float(g), float(zv), float(zvv), "parametrix N=0")


def apply_K_to_Z(c: KolmogorovCoefficients, t: float, z: PhasePoint, s: float, zeta: PhasePoint,
                 n_cov: int = 8) -> float:
    """(KZ)_1(t, z; s, zeta): the defect of the parametrix under the full operator."""
    if not s < t:
        raise DomainError("K Z needs s < t")
    return float(kz_batch(c, t, z.x, z.v, s, zeta.x, zeta.v, n_cov))


def iterated_kernels(c: KolmogorovCoefficients, config: ParametrixConfig, t: float, z: PhasePoint,
                     s: float, zeta: PhasePoint, k: int) -> float:
    """(KZ)_k by k - 1 nested space-time convolutions of (KZ)_1."""
    if k < 1:
        raise DomainError("iterated kernel order starts at 1")
    if not s < t:
        raise DomainError("iterated kernels need s < t")
    _budget(config, k - 1, 1)
    _, (tt, x, v, ss, xi, eta) = _flat(t, z.x, z.v, s, zeta.x, zeta.v)
    if _use_compiled(c, config):
        return float(_compiled_call(c, config, "kz_k", k, tt, x, v, ss, xi, eta)[0][0])
    return float(_Convolver(c, config).kz_k(k, tt, x, v, ss, xi, eta)[0])


def fundamental_solution_batch(c: KolmogorovCoefficients, config: ParametrixConfig, t, x, v, s, xi, eta,
                               order: int | None = None):
    """Truncated series for Gamma and its v-derivatives at broadcast arrays."""
    n = config.series_order if order is None else order
    shape, (t, x, v, s, xi, eta) = _flat(t, x, v, s, xi, eta)
    _check_times(t, s)
    if n == 0 or c.frozen_exact:
        g, _, zv, zvv, _, _ = _frozen(c, t, x, v, s, xi, eta, config.cov_nodes)
        return g.reshape(shape), zv.reshape(shape), zvv.reshape(shape)
    _budget(config, n, t.size)
    if _use_compiled(c, config):
        out = _compiled_call(c, config, "gamma", n, t, x, v, s, xi, eta)
        return tuple(o.reshape(shape) for o in out)
    conv = _Convolver(c, config)
    per = config.evaluations_per_target(n)
    step = max(1, int(config.chunk_elements // per))
    res = [np.empty(t.size) for _ in range(3)]
    for lo in range(0, t.size, step):
        sl = slice(lo, min(t.size, lo + step))
        g, gv, gvv = conv.gamma(n, t[sl], x[sl], v[sl], s[sl], xi[sl], eta[sl])
        res[0][sl], res[1][sl], res[2][sl] = g, gv, gvv
    return tuple(r.reshape(shape) for r in res)


def fundamental_solution(c: KolmogorovCoefficients, config: ParametrixConfig, t: float, z: PhasePoint,
                         s: float, zeta: PhasePoint) -> KernelEvaluation:
    """Gamma(t, z; s, zeta) from the parametrix series truncated at the configured order."""
    if not s < t:
        raise DomainError("fundamental solution needs s < t")
    g, gv, gvv = fundamental_solution_batch(c, config, t, z.x, z.v, s, zeta.x, zeta.v)
    n = 0 if c.frozen_exact else config.series_order
    return KernelEvaluation(float(g), float(gv), float(gvv), f"parametrix N={n}")


# ---------------------------------------------------------------- compiled dispatch


def _compiled_call(c, cfg, what, order, t, x, v, s, xi, eta):
    ck = _backend._ck
    _, a0, amp, freq, b0, eps = c.kernel_tag
    B, wB = _time_rule(cfg.time_quad_nodes, cfg.exponent(c), cfg.time_rule == "symmetric")
    k, w = np.polynomial.hermite_e.hermegauss(cfg.space_quad_order)
    w = w / math.sqrt(_TWO_PI)
    gl_u, gl_w = np.polynomial.legendre.leggauss(cfg.cov_nodes)
    params = np.array([a0, amp, freq, b0, eps], dtype=float)
    mode = 0 if cfg.proposal == "product" else 1
    args = (params, B, wB, k, w, 0.5 * (gl_u + 1.0), 0.5 * gl_w, mode, float(cfg.blend), int(cfg.threads))
    if what == "gamma":
        return ck.gamma_xsin(*args, int(order), t, x, v, s, xi, eta)
    return (ck.kzk_xsin(*args, int(order), t, x, v, s, xi, eta),)
