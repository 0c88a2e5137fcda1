"""Deterministic integral curves and the stochastic flow of the velocity variable.

Deterministic part: integral curves of a drift Y, the resolvent of its reduced
Jacobian and the covariance of the frozen Gaussian built along a curve.

Stochastic part: the flow v -> gamma_{t,tau}(x, v) solving
``gamma = v - int sigma(x, gamma) dW`` by Euler-Maruyama on the path grid,
together with its first and second derivative flows from their explicit
variation-of-constants solutions, a tabulated interpolant of the flow and the
inverse in v.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import _backend
from .brownian import BrownianPath
from .coefficients import KolmogorovCoefficients, SpdeCoefficients
from .errors import DomainError, HorizonError, IntegrationError, InversionError
from .gaussian_kernels import SymMat2
from .geometry import PhasePoint

__all__ = [
    "BrownianPath",
    "IntegralCurveSolution",
    "integral_curve",
    "reduced_jacobian",
    "resolvent",
    "parametrix_covariance",
    "curve_and_covariance",
    "FlowState",
    "FlowTrajectory",
    "ito_wentzell_flow",
    "FlowTable",
    "inverse_flow",
]


def _drift_of(Y):
    if isinstance(Y, KolmogorovCoefficients):
        return Y.drift
    return Y


def _kappa_of(Y):
    if isinstance(Y, KolmogorovCoefficients):
        return Y.kappa
    k = getattr(Y, "kappa", None)
    return k


def default_steps(length: float, tol: float) -> int:
    length = abs(length)
    return max(64, int(math.ceil(length / tol**0.25)))


# ---------------------------------------------------------------- integral curves


@dataclass(frozen=True)
class IntegralCurveSolution:
    """Samples of a curve t -> gamma_t^{s, zeta} with cubic Hermite dense output.

    ``K`` holds the running integral of dY1/dv along the curve when the drift
    exposes it, which is all the reduced resolvent needs.
    """

    s: float
    zeta: PhasePoint
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    dx: np.ndarray
    dv: np.ndarray
    K: np.ndarray | None = None
    kappa: np.ndarray | None = None

    def __post_init__(self):
        tt = self.times if self.times[-1] >= self.times[0] else self.times[::-1]
        order = slice(None) if self.times[-1] >= self.times[0] else slice(None, None, -1)
        object.__setattr__(self, "_sx", CubicHermiteSpline(tt, self.x[order], self.dx[order]))
        object.__setattr__(self, "_sv", CubicHermiteSpline(tt, self.v[order], self.dv[order]))
        if self.K is not None:
            object.__setattr__(self, "_sK", CubicHermiteSpline(tt, self.K[order], self.kappa[order]))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _check(self, t):
        lo, hi = sorted((self.times[0], self.times[-1]))
        t = np.asarray(t, dtype=float)
        span = hi - lo
        if np.any(t < lo - 1e-12 * (1 + span)) or np.any(t > hi + 1e-12 * (1 + span)):
            raise HorizonError(f"time outside curve horizon [{lo}, {hi}]")
        return np.clip(t, lo, hi)

    def position(self, t):
        t = self._check(t)
        return self._sx(t), self._sv(t)

    def at(self, t: float) -> PhasePoint:
        x, v = self.position(t)
        return PhasePoint(float(x), float(v))

    def K_at(self, t):
        if self.K is None:
            raise DomainError("curve was integrated without the dY1/dv accumulator")
        return self._sK(self._check(t))


def _step_grid(s: float, t_end: float, n_min: int, breakpoints) -> np.ndarray:
    """Fixed-step grid from s to t_end that lands on every breakpoint in between."""
    sign = 1.0 if t_end >= s else -1.0
    length = abs(t_end - s)
    h = length / n_min
    knots = [s]
    if breakpoints is not None:
        bp = np.asarray(breakpoints, dtype=float)
        lo, hi = sorted((s, t_end))
        inner = bp[(bp > lo + 1e-14) & (bp < hi - 1e-14)]
        knots.extend(sorted(inner, reverse=sign < 0))
    knots.append(t_end)
    grid = [s]
    for a, b in zip(knots[:-1], knots[1:]):
        m = max(1, int(math.ceil(abs(b - a) / h - 1e-9)))
        grid.extend(a + (b - a) * np.arange(1, m + 1) / m)
    return np.asarray(grid)


def integral_curve(Y, s: float, zeta: PhasePoint, t_end: float, tol: float = 1e-6,
                   breakpoints=None) -> IntegralCurveSolution:
    """Classical RK4 with fixed step for dz/dt = Y(t, z), z(s) = zeta.

    ``Y`` is a ``KolmogorovCoefficients`` bundle or a callable returning
    ``(Y1, Y2)``. Steps are refined so that the grid hits every breakpoint,
    where the drift may be only piecewise smooth in time. Integration backwards
    in time (t_end < s) is allowed.
    """
    drift = _drift_of(Y)
    kappa = _kappa_of(Y)
    if breakpoints is None and isinstance(Y, KolmogorovCoefficients):
        breakpoints = Y.breakpoints
    if t_end == s:
        raise DomainError("empty integration interval")
    grid = _step_grid(s, t_end, default_steps(t_end - s, tol), breakpoints)
    h_min = np.min(np.abs(np.diff(grid)))
    if h_min < 1e-14 * max(1.0, abs(t_end)):
        raise IntegrationError("step size underflow")
    n = grid.size
    X = np.empty(n)
    V = np.empty(n)
    DX = np.empty(n)
    DV = np.empty(n)
    use_k = kappa is not None
    Kc = np.zeros(n) if use_k else None
    KP = np.empty(n) if use_k else None

    def f(t, x, v):
        y1, y2 = drift(t, x, v)
        return float(y1), float(y2)

    def fk(t, x, v):
        return float(kappa(t, x, v))

    x, v = float(zeta.x), float(zeta.v)
    k = 0.0
    for i in range(n):
        t = grid[i]
        y1, y2 = f(t, x, v)
        X[i], V[i], DX[i], DV[i] = x, v, y1, y2
        if use_k:
            Kc[i] = k
            KP[i] = fk(t, x, v)
        if i == n - 1:
            break
        h = grid[i + 1] - t
        a1, b1 = y1, y2
        a2, b2 = f(t + h / 2, x + h / 2 * a1, v + h / 2 * b1)
        a3, b3 = f(t + h / 2, x + h / 2 * a2, v + h / 2 * b2)
        a4, b4 = f(t + h, x + h * a3, v + h * b3)
        if use_k:
            c1 = KP[i]
            c2 = fk(t + h / 2, x + h / 2 * a1, v + h / 2 * b1)
            c3 = fk(t + h / 2, x + h / 2 * a2, v + h / 2 * b2)
            c4 = fk(t + h, x + h * a3, v + h * b3)
            k += h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        x += h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        v += h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (math.isfinite(x) and math.isfinite(v)):
            raise IntegrationError("integral curve left the finite range")
    return IntegralCurveSolution(s=float(s), zeta=zeta, times=grid, x=X, v=V, dx=DX, dv=DV,
                                 K=Kc, kappa=KP)


def reduced_jacobian(Y, p) -> np.ndarray:
    """[[0, dY1/dv], [0, 0]] at the space-time point p."""
    t, x, v = p.as_tuple() if hasattr(p, "as_tuple") else p
    if isinstance(Y, KolmogorovCoefficients):
        k = float(Y.kappa(t, x, v))
    else:
        k = float(Y(t, x, v))
    return np.array([[0.0, k], [0.0, 0.0]])


def resolvent(Y, curve: IntegralCurveSolution, t: float, rho: float, n_steps: int | None = None):
    """Fundamental matrix E_{t,rho} of the reduced Jacobian along the curve, by RK4."""
    if rho > t:
        raise DomainError("resolvent needs rho <= t")
    if t == rho:
        return np.eye(2)
    n = n_steps or default_steps(t - rho, 1e-6)
    h = (t - rho) / n

    def D(u):
        x, v = curve.position(u)
        return reduced_jacobian(Y, (u, float(x), float(v)))

    E = np.eye(2)
    u = rho
    for _ in range(n):
        k1 = D(u) @ E
        Dm = D(u + h / 2)
        k2 = Dm @ (E + h / 2 * k1)
        k3 = Dm @ (E + h / 2 * k2)
        k4 = D(u + h) @ (E + h * k3)
        E = E + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        u += h
    return E


def _gauss_legendre01(n: int):
    k, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (k + 1.0), 0.5 * w


def parametrix_covariance(c: KolmogorovCoefficients, curve: IntegralCurveSolution, t: float,
                          t0: float, n_nodes: int = 16) -> SymMat2:
    """Covariance of the frozen Gaussian: integral over [t0, t] of a (E e2)(E e2)^T.

    The diffusion is sampled on the curve itself at time rho. Because the
    reduced Jacobian is nilpotent, E_{t,rho} e2 = (K_t - K_rho, 1) with K the
    running integral of dY1/dv, read from the curve's accumulator.
    """
    if not t0 < t:
        raise DomainError("covariance needs t0 < t")
    knots = np.unique(np.concatenate(([t0, t], curve.times[(curve.times > t0) & (curve.times < t)])))
    # panels follow the curve grid so kinks of time-piecewise fields are respected
    if knots.size > 9:
        knots = np.linspace(t0, t, 9) if c.breakpoints is None else knots
    u, w = _gauss_legendre01(n_nodes)
    a11 = a12 = a22 = 0.0
    Kt = float(curve.K_at(t))
    for lo, hi in zip(knots[:-1], knots[1:]):
        rho = lo + (hi - lo) * u
        x, v = curve.position(rho)
        a = np.asarray(c.a(rho, x, v), dtype=float)
        d = Kt - curve.K_at(rho)
        ww = (hi - lo) * w * a
        a11 += float(np.sum(ww * d * d))
        a12 += float(np.sum(ww * d))
        a22 += float(np.sum(ww))
    return SymMat2(a11, a12, a22)


def curve_and_covariance(c: KolmogorovCoefficients, s, x, v, t, n_cov: int = 8,
                         n_steps: int | None = None):
    """Vectorised endpoint gamma_t^{s,(x,v)}, K and frozen covariance A_{t,s}^{s,(x,v)}.

    Uses the closed-form integral curve when the bundle provides one and a
    Gauss-Legendre rule in time for the covariance. Otherwise integrates the
    curve together with the moments int a, int a K, int a K^2 by batched RK4.
    Works for t < s as well (curve only; the covariance is then meaningless).
    """
    s, x, v, t = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (s, x, v, t)))
    if c.flow_map is not None:
        gx, gv, K = c.flow_map(s, x, v, t)
        u, w = _gauss_legendre01(n_cov)
        h = (t - s)[..., None]
        rho = s[..., None] + h * u
        xr, vr, Kr = c.flow_map(s[..., None], x[..., None], v[..., None], rho)
        ar = c.a(rho, xr, vr)
        d = K[..., None] - Kr
        ww = h * w * ar
        a11 = np.sum(ww * d * d, axis=-1)
        a12 = np.sum(ww * d, axis=-1)
        a22 = np.sum(ww, axis=-1)
        return gx, gv, K, a11, a12, a22
    return _rk4_moments(c, s, x, v, t, n_steps)


def _rk4_moments(c, s, x, v, t, n_steps=None):
    n = n_steps or 64
    h = (t - s) / n
    drift, kap, afield = c.drift, c.kappa, c.a

    def rhs(r, X):
        px, pv, k = X[0], X[1], X[2]
        y1, y2 = drift(r, px, pv)
        kk = kap(r, px, pv)
        a = afield(r, px, pv)
        return np.stack([y1, y2, kk, a, a * k, a * k * k])

    X = np.stack([x, v, np.zeros_like(x), np.zeros_like(x), np.zeros_like(x), np.zeros_like(x)])
    r = s.copy()
    for _ in range(n):
        k1 = rhs(r, X)
        k2 = rhs(r + h / 2, X + h / 2 * k1)
        k3 = rhs(r + h / 2, X + h / 2 * k2)
        k4 = rhs(r + h, X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        r = r + h
    gx, gv, K, m0, m1, m2 = X
    if not np.all(np.isfinite(X)):
        raise IntegrationError("integral curve left the finite range")
    a11 = K * K * m0 - 2 * K * m1 + m2
    a12 = K * m0 - m1
    return gx, gv, K, a11, a12, m0


# ---------------------------------------------------------------- stochastic flow


@dataclass(frozen=True)
class FlowState:
    """Flow value and derivatives at one time for a batch of starting points."""

    gamma: np.ndarray
    dv: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    dxv: np.ndarray
    dvv: np.ndarray


@dataclass(frozen=True)
class FlowTrajectory:
    """Flow and derivative flows on the path grid, arrays of shape (n_times, *points)."""

    tau: float
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    dv: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    dxv: np.ndarray
    dvv: np.ndarray

    def state(self, k: int) -> FlowState:
        return FlowState(self.gamma[k], self.dv[k], self.dx[k], self.dxx[k], self.dxv[k], self.dvv[k])

    def state_at(self, t: float) -> FlowState:
        """Linear interpolation in time between grid nodes."""
        u = (t - self.times[0]) / (self.times[1] - self.times[0]) if self.times.size > 1 else 0.0
        if u < -1e-9 or u > self.times.size - 1 + 1e-9:
            raise HorizonError("time outside flow horizon")
        k = min(int(math.floor(u + 1e-12)), self.times.size - 2)
        k = max(k, 0)
        f = min(max(u - k, 0.0), 1.0)
        fields = [getattr(self, n) for n in ("gamma", "dv", "dx", "dxx", "dxv", "dvv")]
        return FlowState(*[(1 - f) * a[k] + f * a[k + 1] for a in fields])

    def to_csv(self, path, point: int = 0) -> None:
        """Write (t, x, v, dv, dx) rows for one starting point; v is the flow value."""
        xs = np.broadcast_to(self.x, self.gamma.shape[1:]).ravel()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", "v", "dv", "dx"])
            for k, t in enumerate(self.times):
                g = self.gamma[k].ravel()[point]
                wr.writerow([_fmt(t), _fmt(xs[point]), _fmt(g), _fmt(self.dv[k].ravel()[point]),
                             _fmt(self.dx[k].ravel()[point])])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _em_flow_numpy(c: SpdeCoefficients, times, dW, x, v):
    """Euler-Maruyama for the flow and explicit solutions of its derivative flows."""
    n = dW.size
    dt = times[1] - times[0]
    shape = np.broadcast(x, v).shape
    x = np.broadcast_to(np.asarray(x, dtype=float), shape)
    g = np.array(np.broadcast_to(np.asarray(v, dtype=float), shape))
    out = {k: np.empty((n + 1,) + shape) for k in ("gamma", "dv", "dx", "dxx", "dxv", "dvv")}
    logD = np.zeros(shape)
    D = np.ones(shape)
    Ix = np.zeros(shape)    # int s1/D dW + int s1 s2/D dt
    Ixx = np.zeros(shape)
    Ixv = np.zeros(shape)
    Ivv = np.zeros(shape)
    Y = np.zeros(shape)
    Yx = np.zeros(shape)
    Dx = np.zeros(shape)
    Dv = np.zeros(shape)
    for k in range(n + 1):
        out["gamma"][k] = g
        out["dv"][k] = D
        out["dx"][k] = Y
        out["dxx"][k] = Yx
        out["dxv"][k] = Dx
        out["dvv"][k] = Dv
        if k == n:
            break
        t = times[k]
        dw = dW[k]
        sig = c.sigma(t, x, g)
        p = c.sigma_partials(t, x, g)
        s1, s2 = p["x"], p["v"]
        s11, s12, s22 = p["xx"], p["xv"], p["vv"]
        # second-order forcings of the linear SDEs dP = -s2 P dW - F dW
        Fvv = s22 * D * D
        Fxv = (s12 + s22 * Y) * D
        Fxx = s11 + 2.0 * s12 * Y + s22 * Y * Y
        Ix = Ix + s1 / D * dw + s1 * s2 / D * dt
        Ivv = Ivv + Fvv / D * dw + s2 * Fvv / D * dt
        Ixv = Ixv + Fxv / D * dw + s2 * Fxv / D * dt
        Ixx = Ixx + Fxx / D * dw + s2 * Fxx / D * dt
        logD = logD - s2 * dw - 0.5 * s2 * s2 * dt
        g = g - sig * dw
        D = np.exp(logD)
        Y = -D * Ix
        Dv = -D * Ivv
        Dx = -D * Ixv
        Yx = -D * Ixx
    return out


def ito_wentzell_flow(c: SpdeCoefficients, w: BrownianPath, tau: float, z, t_end: float) -> FlowTrajectory:
    """Flow gamma_{t,tau}(z) and its derivatives at every grid time in [tau, t_end].

    ``z`` is a PhasePoint or a pair of broadcastable arrays of starting points.
    All derivative flows consume the same increments as the flow itself.
    """
    if t_end < tau:
        raise DomainError("t_end must not precede tau")
    if tau < w.t0 - 1e-12 or t_end > w.t_end + 1e-9:
        raise HorizonError("flow horizon exceeds the Brownian path")
    k0 = w.index_of(tau)
    k1 = w.index_of(t_end)
    times = w.times[k0: k1 + 1]
    dW = w.increments[k0:k1]
    x, v = (z.x, z.v) if isinstance(z, PhasePoint) else z
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if c.spatially_constant_sigma:
        out = _shift_flow(c, times, dW, x, v)
    elif c.flow_tag is not None and _backend.HAVE_COMPILED:
        out = _backend.em_flow(c.flow_tag, times, dW, x, v)
    else:
        out = _em_flow_numpy(c, times, dW, x, v)
    return FlowTrajectory(tau=float(tau), times=times, x=x, v=v, **out)


def _shift_flow(c, times, dW, x, v):
    """Flow for sigma depending on time only: a pure shift of v."""
    shape = np.broadcast(x, v).shape
    sig = np.array([float(np.asarray(c.sigma(t, 0.0, 0.0))) for t in times[:-1]])
    shift = np.concatenate(([0.0], np.cumsum(-sig * dW)))
    vb = np.broadcast_to(v, shape)
    gamma = vb[None] + shift.reshape((-1,) + (1,) * len(shape))
    ones = np.ones_like(gamma)
    zeros = np.zeros_like(gamma)
    return {"gamma": gamma, "dv": ones, "dx": zeros, "dxx": zeros, "dxv": zeros, "dvv": zeros}


class FlowTable:
    """The flow on a tensor grid at every path time, with local interpolation.

    In (x, v) the flow value is interpolated by bicubic Hermite patches built
    from the stored value, gradient and mixed derivative, and its first
    derivatives come from differentiating the patch. The second derivative in
    v is interpolated bilinearly. Between grid times everything is linear in t.
    Points outside the table are solved directly.
    """

    def __init__(self, c: SpdeCoefficients, w: BrownianPath, tau: float, t_end: float,
                 half_width: float = 8.0, n: int = 65):
        self.c = c
        self.w = w
        self.tau = float(tau)
        self.t_end = float(t_end)
        self.L = float(half_width)
        self.n = int(n)
        self.h = 2 * self.L / (self.n - 1)
        self.const_shift = c.spatially_constant_sigma
        if self.const_shift:
            # a pure shift needs a single reference point
            X = V = np.zeros((1, 1))
        else:
            axis = np.linspace(-self.L, self.L, self.n)
            X, V = np.meshgrid(axis, axis, indexing="ij")
        self.traj = ito_wentzell_flow(c, w, tau, (X, V), t_end)
        self.times = self.traj.times
        self.dt = w.dt

    def _time_index(self, t):
        u = (np.asarray(t, dtype=float) - self.tau) / self.dt
        if np.any(u < -1e-7) or np.any(u > self.times.size - 1 + 1e-7):
            raise HorizonError("time outside flow table horizon")
        k = np.clip(np.floor(u + 1e-9).astype(int), 0, self.times.size - 2)
        f = np.clip(u - k, 0.0, 1.0)
        return k, f

    def _patch(self, k, x, v):
        """Bicubic Hermite value, d/dx, d/dv at time index k (arrays)."""
        T = self.traj
        ix = np.clip(np.floor((x + self.L) / self.h).astype(int), 0, self.n - 2)
        iv = np.clip(np.floor((v + self.L) / self.h).astype(int), 0, self.n - 2)
        p = (x + self.L) / self.h - ix
        q = (v + self.L) / self.h - iv
        h = self.h

        def basis(s):
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            d00 = 6 * s**2 - 6 * s
            d10 = 3 * s**2 - 4 * s + 1
            d01 = -6 * s**2 + 6 * s
            d11 = 3 * s**2 - 2 * s
            return (h00, h10, h01, h11), (d00, d10, d01, d11)

        (a0, a1, a2, a3), (da0, da1, da2, da3) = basis(p)
        (b0, b1, b2, b3), (db0, db1, db2, db3) = basis(q)
        val = np.zeros_like(p)
        gx = np.zeros_like(p)
        gv = np.zeros_like(p)
        for ox, (ax, dax) in ((0, (a0, da0)), (1, (a2, da2))):
            for ov, (bv, dbv) in ((0, (b0, db0)), (1, (b2, db2))):
                i, j = ix + ox, iv + ov
                f = T.gamma[k, i, j]
                fx = T.dx[k, i, j] * h
                fv = T.dv[k, i, j] * h
                fxv = T.dxv[k, i, j] * h * h
                axd = a1 if ox == 0 else a3
                daxd = da1 if ox == 0 else da3
                bvd = b1 if ov == 0 else b3
                dbvd = db1 if ov == 0 else db3
                val += f * ax * bv + fx * axd * bv + fv * ax * bvd + fxv * axd * bvd
                gx += (f * dax * bv + fx * daxd * bv + fv * dax * bvd + fxv * daxd * bvd) / h
                gv += (f * ax * dbv + fx * axd * dbv + fv * ax * dbvd + fxv * axd * dbvd) / h
        # bilinear second v-derivative
        dvv = ((1 - p) * (1 - q) * T.dvv[k, ix, iv] + p * (1 - q) * T.dvv[k, ix + 1, iv]
               + (1 - p) * q * T.dvv[k, ix, iv + 1] + p * q * T.dvv[k, ix + 1, iv + 1])
        return val, gx, gv, dvv

    def evaluate(self, t, x, v):
        """(gamma, d_x gamma, d_v gamma, d_vv gamma) at arbitrary points."""
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        if self.const_shift:
            k, f = self._time_index(t)
            sh = self.traj.gamma[:, 0, 0] - self.traj.v[0, 0]
            g = v + (1 - f) * sh[k] + f * sh[k + 1]
            one = np.ones_like(g)
            zero = np.zeros_like(g)
            return g, zero, one, zero
        shape = t.shape
        t, x, v = (np.atleast_1d(q).ravel() for q in (t, x, v))
        k, f = self._time_index(t)
        inside = (np.abs(x) <= self.L) & (np.abs(v) <= self.L)
        g0, x0, v0, vv0 = self._patch(k, np.clip(x, -self.L, self.L), np.clip(v, -self.L, self.L))
        g1, x1, v1, vv1 = self._patch(k + 1, np.clip(x, -self.L, self.L), np.clip(v, -self.L, self.L))
        res = [(1 - f) * a + f * b for a, b in ((g0, g1), (x0, x1), (v0, v1), (vv0, vv1))]
        if not np.all(inside):
            out_idx = np.nonzero(~inside)
            direct = self.direct(t[out_idx], x[out_idx], v[out_idx])
            for r, d in zip(res, direct):
                r[out_idx] = d
        return tuple(r.reshape(shape) for r in res)

    def direct(self, t, x, v):
        """Solve the flow from tau for each point; used off-table."""
        t = np.atleast_1d(t)
        x = np.atleast_1d(x)
        v = np.atleast_1d(v)
        out = [np.empty_like(x, dtype=float) for _ in range(4)]
        traj = ito_wentzell_flow(self.c, self.w, self.tau, (x, v), self.t_end)
        k, f = self._time_index(t)
        idx = np.arange(x.size)
        for o, name in zip(out, ("gamma", "dx", "dv", "dvv")):
            arr = getattr(traj, name)
            o[...] = (1 - f) * arr[k, idx] + f * arr[k + 1, idx]
        return out

    def gamma(self, t, x, v):
        return self.evaluate(t, x, v)[0]

    def second_derivatives(self, t, x, v):
        """(d_xx gamma, d_xv gamma), bilinear in space and linear in time."""
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        if self.const_shift:
            z = np.zeros(t.shape)
            return z, z.copy()
        k, f = self._time_index(t)
        xc = np.clip(x, -self.L, self.L)
        vc = np.clip(v, -self.L, self.L)
        ix = np.clip(np.floor((xc + self.L) / self.h).astype(int), 0, self.n - 2)
        iv = np.clip(np.floor((vc + self.L) / self.h).astype(int), 0, self.n - 2)
        p = (xc + self.L) / self.h - ix
        q = (vc + self.L) / self.h - iv
        out = []
        for arr in (self.traj.dxx, self.traj.dxv):
            vals = []
            for kk in (k, k + 1):
                vals.append((1 - p) * (1 - q) * arr[kk, ix, iv] + p * (1 - q) * arr[kk, ix + 1, iv]
                            + (1 - p) * q * arr[kk, ix, iv + 1] + p * q * arr[kk, ix + 1, iv + 1])
            out.append((1 - f) * vals[0] + f * vals[1])
        return tuple(out)


def inverse_flow(flow, t: float, x, v_target, tol: float = 1e-12, max_bracket: float = 1e6):
    """Solve gamma_{t,tau}(x, v) = v_target for v by bracketing bisection.

    ``flow`` is anything with a ``gamma(t, x, v)`` method (for example a
    FlowTable). The map v -> gamma is strictly increasing, so a bracket found
    by doubling its half-width always encloses the root.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(v_target, dtype=float)
    x, target = np.broadcast_arrays(x, target)
    half = np.ones_like(target)
    lo = target - half
    hi = target + half
    for _ in range(80):
        glo = flow.gamma(t, x, lo)
        ghi = flow.gamma(t, x, hi)
        bad_lo = glo > target
        bad_hi = ghi < target
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        half = np.where(bad_lo | bad_hi, 2 * half, half)
        if np.any(half > max_bracket):
            raise InversionError("bracket expansion exceeded the configured bound")
        lo = np.where(bad_lo, target - half, lo)
        hi = np.where(bad_hi, target + half, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = flow.gamma(t, x, mid)
        done = np.abs(gm - target) <= tol
        if np.all(done | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid)))):
            return mid if mid.ndim else float(mid)
        below = gm < target
        lo = np.where(below & ~done, mid, lo)
        hi = np.where(~below & ~done, mid, hi)
        lo = np.where(done, mid, lo)
        hi = np.where(done, mid, hi)
    raise InversionError("bisection did not reach the tolerance")
