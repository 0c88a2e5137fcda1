"""Quantitative checks on fundamental solutions.

Kernels passed to the checks here are callables
``kernel(t, x, v, s, xi, eta)`` on broadcastable arrays, returning either the
value or a tuple whose first entry is the value. ``LangevinTransition`` and
``ParametrixKernel`` adapt the closed form and the parametrix series;
``FixedPoleKernel`` adapts a three-argument kernel with a frozen pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .brownian import STREAM_MONTE_CARLO, STREAM_PATH, BrownianPath, philox_generator
from .coefficients import KolmogorovCoefficients, SpdeCoefficients
from .errors import ControlError, DomainError
from .flow_engine import (
    curve_and_covariance,
    default_steps,
    integral_curve,
    ito_wentzell_flow,
    parametrix_covariance,
)
from .gaussian_kernels import (
    LangevinParams,
    SymMat2,
    conditional_moments,
    gauss_hermite_2d,
    kolmogorov_matrix,
    normal_pdf_2d,
)
from .geometry import PhasePoint, SpaceTimePoint
from .parametrix_solver import ParametrixConfig, fundamental_solution_batch

__all__ = [
    "Check",
    "LangevinTransition",
    "ParametrixKernel",
    "FixedPoleKernel",
    "PdeResidual",
    "pde_residual",
    "CKQuadrature",
    "ck_quadrature",
    "CKReport",
    "chapman_kolmogorov_defect",
    "SandwichGrid",
    "BoundReport",
    "sandwich_estimate",
    "ControlSynthesis",
    "minimal_energy_control",
    "MCReport",
    "mc_conditional_check",
    "FlowBoundReport",
    "flow_bound_check",
]

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Check:
    """One gated quantity: passes when ``passed`` is true."""

    name: str
    value: float
    threshold: float
    passed: bool


def _value(out):
    return np.asarray(out[0] if isinstance(out, tuple) else out, dtype=float)


# ---------------------------------------------------------------- kernel adapters


class LangevinTransition:
    """Closed-form fundamental solution for constant a and b.

    It is the transition density of dX = V dt, dV = -b dt + sqrt(a) dB, since
    the operator carries b d_v with a plus sign.
    """

    def __init__(self, a: float, b: float = 0.0):
        if not a > 0:
            raise DomainError("a must be positive")
        self.a = float(a)
        self.b = float(b)

    def __call__(self, t, x, v, s, xi, eta):
        t, x, v, s, xi, eta = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v, s, xi, eta)))
        h = t - s
        if not np.all(h > 0):
            raise DomainError("transition density needs s < t")
        X = x - xi - h * eta + 0.5 * self.b * h * h
        V = v - eta + self.b * h
        a = self.a
        p11, p12, p22 = 12.0 / (a * h**3), -6.0 / (a * h * h), 4.0 / (a * h)
        g = math.sqrt(3.0) / (math.pi * a * h * h) * np.exp(-0.5 * (p11 * X * X + 2 * p12 * X * V + p22 * V * V))
        pv = p12 * X + p22 * V
        return g, -g * pv, g * (pv * pv - p22)


class ParametrixKernel:
    """Truncated parametrix series for a Kolmogorov bundle."""

    def __init__(self, c: KolmogorovCoefficients, config: ParametrixConfig | None = None, order: int | None = None):
        self.c = c
        self.config = config or ParametrixConfig()
        self.order = order

    def __call__(self, t, x, v, s, xi, eta):
        return fundamental_solution_batch(self.c, self.config, t, x, v, s, xi, eta, order=self.order)


class FixedPoleKernel:
    """Wrap ``kernel(t, x, v)`` bound to the pole (s, zeta); other poles are rejected."""

    def __init__(self, kernel, s: float, zeta: PhasePoint):
        self.kernel = kernel
        self.s = float(s)
        self.zeta = zeta

    def __call__(self, t, x, v, s, xi, eta):
        if not (np.all(np.asarray(s) == self.s) and np.all(np.asarray(xi) == self.zeta.x)
                and np.all(np.asarray(eta) == self.zeta.v)):
            raise DomainError("kernel is bound to a single pole")
        return self.kernel(t, x, v)


# ---------------------------------------------------------------- PDE residual


@dataclass(frozen=True)
class PdeResidual:
    residual: float
    relative: float
    scale: float
    steps: tuple[float, float, float]


def pde_residual(kernel, c: KolmogorovCoefficients, probe: SpaceTimePoint, pole: tuple[float, PhasePoint],
                 h: tuple[float, float, float] | None = None) -> PdeResidual:
    """d_t G + <Y, grad G> - (a/2) d_vv G - b d_v G at the probe, by central differences.

    Default steps follow the kernel's own scales: 1e-4 (t - s) in time,
    1e-3 (t - s)^{3/2} in x and 1e-3 (t - s)^{1/2} in v.
    """
    s, zeta = pole
    t, x, v = probe.as_tuple()
    if not t > s:
        raise DomainError("probe must lie after the pole")
    if h is None:
        d = t - s
        h = (1e-4 * d, 1e-3 * d**1.5, 1e-3 * math.sqrt(d))
    ht, hx, hv = h
    if not t - ht > s:
        raise DomainError("time step reaches the pole")
    T = np.array([t, t + ht, t - ht, t, t, t, t])
    X = np.array([x, x, x, x + hx, x - hx, x, x])
    V = np.array([v, v, v, v, v, v + hv, v - hv])
    g = _value(kernel(T, X, V, s, zeta.x, zeta.v))
    gt = (g[1] - g[2]) / (2 * ht)
    gx = (g[3] - g[4]) / (2 * hx)
    gv = (g[5] - g[6]) / (2 * hv)
    gvv = (g[5] - 2 * g[0] + g[6]) / (hv * hv)
    y1, y2 = (float(q) for q in c.drift(t, x, v))
    a = float(c.a(t, x, v))
    b = float(c.b(t, x, v))
    diff = 0.5 * a * gvv
    res = gt + y1 * gx + y2 * gv - diff - b * gv
    scale = abs(gt) + abs(diff)
    return PdeResidual(float(res), float(abs(res) / (scale + _TINY)), float(scale), (ht, hx, hv))


# ---------------------------------------------------------------- Chapman-Kolmogorov


@dataclass(frozen=True)
class CKQuadrature:
    """Gauss-Hermite rule over the intermediate point, placed by a Gaussian proposal."""

    mean: PhasePoint
    cov: SymMat2
    order: int = 16


def _inv2(a11, a12, a22):
    det = a11 * a22 - a12 * a12
    return a22 / det, -a12 / det, a11 / det


def ck_quadrature(c: KolmogorovCoefficients, t: float, z: PhasePoint, rho: float, s: float, zeta: PhasePoint,
                  order: int = 16, n_cov: int = 8) -> CKQuadrature:
    """Proposal matching the product of the two Gaussian factors in the intermediate point.

    The right factor sits at the forward curve from the pole with its frozen
    covariance. The left factor, as a function of its pole, sits at the
    backward curve from the target with the frozen covariance pulled back by
    the reduced resolvent.
    """
    if not s < rho < t:
        raise DomainError("need s < rho < t")
    mx_r, mv_r, _, r11, r12, r22 = curve_and_covariance(c, s, zeta.x, zeta.v, rho, n_cov)
    bx, bv, _, _, _, _ = curve_and_covariance(c, t, z.x, z.v, rho, n_cov)
    _, _, K, l11, l12, l22 = curve_and_covariance(c, rho, bx, bv, t, n_cov)
    K, l11, l12, l22 = (float(q) for q in (K, l11, l12, l22))
    # E^{-1} A E^{-T} with E = [[1, K], [0, 1]]
    p11 = l11 - 2 * K * l12 + K * K * l22
    p12 = l12 - K * l22
    p22 = l22
    i1 = _inv2(p11, p12, p22)
    i2 = _inv2(float(r11), float(r12), float(r22))
    s11, s12, s22 = i1[0] + i2[0], i1[1] + i2[1], i1[2] + i2[2]
    c11, c12, c22 = _inv2(s11, s12, s22)
    hx = i1[0] * float(bx) + i1[1] * float(bv) + i2[0] * float(mx_r) + i2[1] * float(mv_r)
    hv = i1[1] * float(bx) + i1[2] * float(bv) + i2[1] * float(mx_r) + i2[2] * float(mv_r)
    mean = PhasePoint(c11 * hx + c12 * hv, c12 * hx + c22 * hv)
    return CKQuadrature(mean, SymMat2(c11, c12, c22), order)


@dataclass(frozen=True)
class CKReport:
    defect: float
    convolution: float
    direct: float


def chapman_kolmogorov_defect(kernel, t: float, z: PhasePoint, rho: float, s: float, zeta: PhasePoint,
                              quad: CKQuadrature) -> CKReport:
    """|int G(t, z; rho, eta) G(rho, eta; s, zeta) d eta - G(t, z; s, zeta)|."""
    if not s < rho < t:
        raise DomainError("need s < rho < t")
    ex, ev, w = gauss_hermite_2d(quad.mean, quad.cov, quad.order)
    left = _value(kernel(t, z.x, z.v, rho, ex, ev))
    right = _value(kernel(rho, ex, ev, s, zeta.x, zeta.v))
    dens = normal_pdf_2d(quad.mean, quad.cov, ex, ev)
    conv = math.fsum(w * left * right / dens)
    direct = float(_value(kernel(t, z.x, z.v, s, zeta.x, zeta.v)))
    return CKReport(abs(conv - direct), conv, direct)


# ---------------------------------------------------------------- sandwich bounds


@dataclass(frozen=True)
class SandwichGrid:
    """Probe points around the free curve from the pole (s, zeta).

    At each time t the offsets from gamma_t^{s,zeta} are L_h u, where L_h is the
    Cholesky factor of Q_h (h = t - s) and u1, u2 run over a uniform grid on
    [-radius, radius], so every offset has Q_h-norm at most sqrt(2) radius.
    """

    s: float
    zeta: PhasePoint
    times: tuple[float, ...]
    n_x: int = 9
    n_v: int = 9
    radius: float = 3.0

    def __post_init__(self):
        if not self.times or self.n_x < 1 or self.n_v < 1:
            raise DomainError("sandwich grid must be nonempty")
        if min(self.times) <= self.s:
            raise DomainError("grid times must follow the pole")

    @property
    def size(self) -> int:
        return len(self.times) * self.n_x * self.n_v

    def refined(self) -> "SandwichGrid":
        """Nested refinement: midpoints inserted along every axis."""
        ts = sorted(self.times)
        mids = [0.5 * (a + b) for a, b in zip(ts[:-1], ts[1:])]
        return replace(self, times=tuple(sorted(ts + mids)), n_x=2 * self.n_x - 1, n_v=2 * self.n_v - 1)

    def offsets(self):
        u1 = np.linspace(-self.radius, self.radius, self.n_x) if self.n_x > 1 else np.zeros(1)
        u2 = np.linspace(-self.radius, self.radius, self.n_v) if self.n_v > 1 else np.zeros(1)
        return np.meshgrid(u1, u2, indexing="ij")


@dataclass(frozen=True)
class BoundReport:
    """Least mu with mu^{-2} G_heat(Q / mu) <= G <= mu^2 G_heat(mu Q) on a grid."""

    mu_upper: float
    mu_lower: float
    saturated: bool
    grid_size: int
    worst_upper: tuple[float, float, float]
    worst_lower: tuple[float, float, float]
    mu_max: float

    @property
    def mu(self) -> float:
        return max(self.mu_upper, self.mu_lower)

    def checks(self):
        return [Check(f"sandwich mu (grid {self.grid_size})", self.mu, self.mu_max, not self.saturated)]


def _least_mu(feasible, n_points: int, mu_max: float, n_scan: int, rtol: float):
    """Per point, least mu in [1, mu_max] with feasible(mu) true; inf where none.

    ``feasible(mu)`` takes an array of mu per point and must be monotone in mu.
    """
    grid = np.geomspace(1.0, mu_max, n_scan)
    lo = np.full(n_points, np.nan)
    hi = np.full(n_points, np.inf)
    prev = None
    for m in grid:
        ok = feasible(np.full(n_points, m))
        new = ok & np.isinf(hi)
        hi[new] = m
        lo[new] = prev if prev is not None else m
        prev = m
    out = hi.copy()
    todo = np.isfinite(hi) & (lo < hi)
    a, b = lo[todo], hi[todo]
    idx = np.nonzero(todo)[0]
    while a.size and np.any(b - a > rtol * b):
        mid = 0.5 * (a + b)
        full = np.ones(n_points)
        full[idx] = mid
        ok = feasible(full)[idx]
        b = np.where(ok, mid, b)
        a = np.where(ok, a, mid)
    out[idx] = b
    return out


def sandwich_estimate(kernel, c: KolmogorovCoefficients, grid: SandwichGrid, mu_max: float = 1e3,
                      n_scan: int = 64, rtol: float = 1e-12) -> BoundReport:
    """Gaussian sandwich constant of a kernel on a probe grid.

    Envelopes are mu^2 G_heat(mu Q_h, w) above and mu^{-2} G_heat(Q_h / mu, w)
    below, with w the offset from the free curve. Both families are monotone in
    mu, so every point has its own least feasible mu and the grid constant is
    their maximum.
    """
    u1, u2 = grid.offsets()
    ts, xs, vs, qs, peaks = [], [], [], [], []
    for t in grid.times:
        h = t - grid.s
        gx, gv, *_ = curve_and_covariance(c, grid.s, grid.zeta.x, grid.zeta.v, t)
        Q = kolmogorov_matrix(h)
        L = Q.cholesky()
        wx = L[0, 0] * u1.ravel()
        wv = L[1, 0] * u1.ravel() + L[1, 1] * u2.ravel()
        P = Q.inverse()
        ts.append(np.full(wx.size, t))
        xs.append(float(gx) + wx)
        vs.append(float(gv) + wv)
        qs.append(P.quad_form(wx, wv))
        peaks.append(np.full(wx.size, math.sqrt(12.0) / (2 * math.pi * h * h)))
    t = np.concatenate(ts)
    x = np.concatenate(xs)
    v = np.concatenate(vs)
    q = np.concatenate(qs)
    g0 = np.concatenate(peaks)
    G = _value(kernel(t, x, v, grid.s, grid.zeta.x, grid.zeta.v))
    slack = 1.0 + 1e-12
    n = G.size
    mu_u = _least_mu(lambda m: G <= slack * m * g0 * np.exp(-0.5 * q / m), n, mu_max, n_scan, rtol)
    mu_l = _least_mu(lambda m: g0 * np.exp(-0.5 * m * q) / m <= slack * G, n, mu_max, n_scan, rtol)
    iu = int(np.argmax(mu_u))
    il = int(np.argmax(mu_l))
    sat = bool(np.isinf(mu_u[iu]) or np.isinf(mu_l[il]))
    return BoundReport(
        mu_upper=float(mu_u[iu]),
        mu_lower=float(mu_l[il]),
        saturated=sat,
        grid_size=grid.size,
        worst_upper=(float(t[iu]), float(x[iu]), float(v[iu])),
        worst_lower=(float(t[il]), float(x[il]), float(v[il])),
        mu_max=float(mu_max),
    )


# ---------------------------------------------------------------- minimal-energy control


@dataclass(frozen=True)
class ControlSynthesis:
    times: np.ndarray
    control: np.ndarray
    energy: float
    linear_energy: float
    endpoint_gap: float
    gramian: SymMat2
    multiplier: tuple[float, float]
    iterations: int
    energy_ratio: float
    sup_ratio: float

    def checks(self, tol: float = 1e-8):
        return [
            Check("control energy", self.energy, math.inf, math.isfinite(self.energy)),
            Check("control endpoint gap", self.endpoint_gap, tol, self.endpoint_gap < tol),
        ]


def minimal_energy_control(c: KolmogorovCoefficients, s: float, zeta: PhasePoint, t: float, z: PhasePoint,
                           tol: float = 1e-10, max_iter: int = 30, n_steps: int | None = None) -> ControlSynthesis:
    """Steer d psi = (Y(psi) + u e2) d rho from (s, zeta) to (t, z) with least energy.

    The control is u = (K_t - K_rho) lam1 + lam2, the minimal-energy family of
    the linearized pair. lam starts at G^{-1}(z - gamma_t) with G the
    controllability Gramian and is corrected by Newton on the nonlinear
    endpoint, whose sensitivity is integrated alongside the state.
    """
    if not s < t:
        raise DomainError("control needs s < t")
    h = t - s
    n = n_steps or default_steps(h, 1e-10)
    curve = integral_curve(c, s, zeta, t, tol=1e-10)
    unit = replace(c, a=lambda r, x, v: np.ones(np.broadcast(r, x, v).shape))
    G = parametrix_covariance(unit, curve, t, s, n_nodes=16)
    gx, gv = (float(q) for q in curve.position(t))
    d = np.array([z.x - gx, z.v - gv])
    Gm = G.as_array()
    lam = np.linalg.solve(Gm, d)
    linear_energy = float(d @ lam)
    Kt = float(curve.K_at(t))

    def basis(r):
        return np.array([Kt - float(curve.K_at(r)), 1.0])

    def shoot(lam):
        def rhs(r, X):
            px, pv = X[0], X[1]
            S = X[2:].reshape(2, 2)
            e = basis(r)
            y1, y2 = c.drift(r, px, pv)
            j11, j12, j21, j22 = (float(q) for q in c.jacobian(r, px, pv))
            J = np.array([[j11, j12], [j21, j22]])
            dS = J @ S + np.array([[0.0, 0.0], e])
            return np.concatenate(([float(y1), float(y2) + e @ lam], dS.ravel()))

        X = np.array([zeta.x, zeta.v, 0.0, 0.0, 0.0, 0.0])
        dt = h / n
        for k in range(n):
            r = s + k * dt
            k1 = rhs(r, X)
            k2 = rhs(r + dt / 2, X + dt / 2 * k1)
            k3 = rhs(r + dt / 2, X + dt / 2 * k2)
            k4 = rhs(r + dt, X + dt * k3)
            X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return X[:2], X[2:].reshape(2, 2)

    target = np.array([z.x, z.v])
    it = 0
    end, S = shoot(lam)
    gap = float(np.linalg.norm(end - target))
    while gap > tol:
        if it >= max_iter or not np.isfinite(gap):
            raise ControlError(f"endpoint correction stalled at gap {gap:.3e} after {it} steps")
        lam = lam - np.linalg.solve(S, end - target)
        end, S = shoot(lam)
        gap = float(np.linalg.norm(end - target))
        it += 1
    times = s + h * np.arange(n + 1) / n
    K = curve.K_at(times)
    u = (Kt - K) * lam[0] + lam[1]
    energy = float(lam @ Gm @ lam)
    scaled = d[0] ** 2 / h**3 + d[1] ** 2 / h
    if scaled > 0:
        e_ratio = energy / scaled
        s_ratio = h * float(np.max(u * u)) / scaled
    else:
        e_ratio = s_ratio = math.nan
    return ControlSynthesis(times, u, energy, linear_energy, gap, G, (float(lam[0]), float(lam[1])), it,
                            e_ratio, s_ratio)


# ---------------------------------------------------------------- Monte Carlo conditional law


@dataclass(frozen=True)
class MCReport:
    n_paths: int
    mean: tuple[float, float]
    mean_ref: tuple[float, float]
    stderr: tuple[float, float]
    cov: SymMat2
    cov_ref: SymMat2
    frobenius_rel: float
    test_values: tuple[float, ...]
    test_refs: tuple[float, ...]
    test_stderr: tuple[float, ...]
    se_gate: float = 4.0
    cov_tol: float = 0.05

    def checks(self):
        out = []
        for name, m, r, se in zip(("x", "v"), self.mean, self.mean_ref, self.stderr):
            z = abs(m - r) / se if se > 0 else (0.0 if m == r else math.inf)
            out.append(Check(f"mc mean {name} (SE units)", z, self.se_gate, z <= self.se_gate))
        out.append(Check("mc covariance frobenius rel", self.frobenius_rel, self.cov_tol,
                         self.frobenius_rel <= self.cov_tol))
        for k, (m, r, se) in enumerate(zip(self.test_values, self.test_refs, self.test_stderr)):
            z = abs(m - r) / se if se > 0 else (0.0 if m == r else math.inf)
            out.append(Check(f"mc test function {k} (SE units)", z, self.se_gate, z <= self.se_gate))
        return out

    @property
    def passed(self) -> bool:
        return all(ch.passed for ch in self.checks())


def _test_functions(mean: PhasePoint, cov: SymMat2):
    sx = math.sqrt(cov.a11) if cov.a11 > 0 else 1.0
    sv = math.sqrt(cov.a22) if cov.a22 > 0 else 1.0
    centres = [(mean.x, mean.v), (mean.x + sx, mean.v), (mean.x, mean.v + sv)]
    return [(cx, cv, sx, sv) for cx, cv in centres]


def _phi(f, x, v):
    cx, cv, sx, sv = f
    return np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((v - cv) / sv) ** 2))


def mc_conditional_check(params: LangevinParams, w: BrownianPath, zeta: PhasePoint, t: float, n_paths: int,
                         seed: int = 0, chunk: int = 1 << 14) -> MCReport:
    """Simulate the state given a fixed observation path and compare with its Gaussian law.

    Between grid nodes the observation path is linear and the unobserved noise
    enters through sqrt(a - sigma^2) B, so each step is sampled exactly: the
    B-part of (dX, dV) is Gaussian with covariance (a - sigma^2) Q_dt. Path
    chunks draw from Philox substreams keyed by chunk index and all sums are
    compensated, so the result does not depend on how chunks are scheduled.
    """
    if n_paths < 10_000:
        raise DomainError("n_paths must be at least 10^4")
    if not t > 0:
        raise DomainError("t must be positive")
    k1 = w.index_of(w.t0 + t)
    dt = w.dt
    dW = w.increments[:k1]
    red = params.a - params.sigma**2
    if red < 0:
        raise DomainError("a - sigma^2 must be non-negative")
    L = kolmogorov_matrix(dt).scaled(red).cholesky() if red > 0 else np.zeros((2, 2))
    mean_ref, cov_ref = conditional_moments(params, t, zeta, w)
    if not cov_ref.is_positive_definite():
        raise DomainError("conditional covariance is degenerate")
    funcs = _test_functions(mean_ref, cov_ref)
    keys = ["x", "v", "xx", "xv", "vv"] + [f"f{k}" for k in range(len(funcs))] + [f"ff{k}" for k in range(len(funcs))]
    sums = {k: [] for k in keys}
    sig = params.sigma
    for j, lo in enumerate(range(0, n_paths, chunk)):
        m = min(chunk, n_paths - lo)
        rng = philox_generator(seed, STREAM_MONTE_CARLO, j)
        X = np.full(m, zeta.x)
        V = np.full(m, zeta.v)
        for k in range(k1):
            n1 = rng.standard_normal(m)
            n2 = rng.standard_normal(m)
            bx = L[0, 0] * n1
            bv = L[1, 0] * n1 + L[1, 1] * n2
            X = X + V * dt - 0.5 * sig * dW[k] * dt + bx
            V = V - sig * dW[k] + bv
        # centre before squaring so near-degenerate covariances keep precision
        cx = X - mean_ref.x
        cv = V - mean_ref.v
        for key, arr in (("x", cx), ("v", cv), ("xx", cx * cx), ("xv", cx * cv), ("vv", cv * cv)):
            sums[key].append(math.fsum(arr))
        for i, f in enumerate(funcs):
            p = _phi(f, X, V)
            sums[f"f{i}"].append(math.fsum(p))
            sums[f"ff{i}"].append(math.fsum(p * p))
    tot = {k: math.fsum(vals) / n_paths for k, vals in sums.items()}
    mx, mv = tot["x"], tot["v"]
    nn = n_paths / (n_paths - 1)
    c11 = (tot["xx"] - mx * mx) * nn
    c12 = (tot["xv"] - mx * mv) * nn
    c22 = (tot["vv"] - mv * mv) * nn
    cov = SymMat2(c11, c12, c22)
    diff = np.array([[c11 - cov_ref.a11, c12 - cov_ref.a12], [c12 - cov_ref.a12, c22 - cov_ref.a22]])
    frob = float(np.linalg.norm(diff) / np.linalg.norm(cov_ref.as_array()))
    se = (math.sqrt(max(c11, 0.0) / n_paths), math.sqrt(max(c22, 0.0) / n_paths))
    gx, gv, gw = gauss_hermite_2d(mean_ref, cov_ref, 20)
    vals, refs, ses = [], [], []
    for i, f in enumerate(funcs):
        m1 = tot[f"f{i}"]
        var = max(tot[f"ff{i}"] - m1 * m1, 0.0) * nn
        vals.append(m1)
        refs.append(math.fsum(gw * _phi(f, gx, gv)))
        ses.append(math.sqrt(var / n_paths))
    return MCReport(
        n_paths=n_paths,
        mean=(mean_ref.x + mx, mean_ref.v + mv),
        mean_ref=(mean_ref.x, mean_ref.v),
        stderr=se,
        cov=cov,
        cov_ref=cov_ref,
        frobenius_rel=frob,
        test_values=tuple(vals),
        test_refs=tuple(refs),
        test_stderr=tuple(ses),
    )


# ---------------------------------------------------------------- flow estimates


@dataclass(frozen=True)
class FlowBoundReport:
    """Smallest constants making the global flow estimates hold on the sample.

    ``m_value``: sup |gamma| / sqrt(1 + x^2 + v^2).
    ``m_dv``: sup |log d_v gamma| / (t - tau)^eps, so d_v gamma lies in
    [exp(-m (t-tau)^eps), exp(m (t-tau)^eps)] for every m >= m_dv.
    ``m_dx``: sup |d_x gamma| / (t - tau)^eps.
    ``m_second``: sup |second derivative| sqrt(1 + x^2 + v^2) / (t - tau)^eps.
    """

    n_paths: int
    n_points: int
    eps: float
    m_value: float
    m_dv: float
    m_dx: float
    m_second: float
    dv_min: float
    dv_max: float
    dx_max: float
    per_path_m: np.ndarray = field(repr=False)

    @property
    def m(self) -> float:
        return max(self.m_value, self.m_dv, self.m_dx, self.m_second)

    def checks(self):
        out = []
        for name, val in (("flow value", self.m_value), ("flow d_v envelope", self.m_dv),
                          ("flow d_x", self.m_dx), ("flow second derivatives", self.m_second)):
            out.append(Check(f"{name} constant m", val, math.inf, bool(math.isfinite(val))))
        out.append(Check("flow d_v positive (min)", self.dv_min, 0.0, self.dv_min > 0))
        return out


def flow_bound_check(c: SpdeCoefficients, n_paths: int, grid_x, grid_v, t_end: float = 1.0, dt: float = 1e-3,
                     seed: int = 0, tau: float = 0.0, eps: float | None = None) -> FlowBoundReport:
    """Sample the flow and its derivatives over paths and a point grid."""
    eps = c.eps if eps is None else eps
    if eps is None or not 0 < eps < 0.5:
        raise DomainError("eps must lie in (0, 1/2)")
    X, V = np.meshgrid(np.asarray(grid_x, dtype=float), np.asarray(grid_v, dtype=float), indexing="ij")
    X = X.ravel()
    V = V.ravel()
    weight = np.sqrt(1.0 + X * X + V * V)
    n = int(round((t_end - tau) / dt))
    mv = md = mx = m2 = 0.0
    dv_min, dv_max, dx_max = math.inf, -math.inf, 0.0
    per_path = np.empty(n_paths)
    for p in range(n_paths):
        rng = philox_generator(seed, STREAM_PATH, p)
        w = BrownianPath(t0=float(tau), dt=float(dt), increments=rng.standard_normal(n) * math.sqrt(dt), seed=seed)
        tr = ito_wentzell_flow(c, w, tau, (X, V), t_end)
        el = (tr.times[1:] - tau)[:, None] ** eps
        a = float(np.max(np.abs(tr.gamma) / weight))
        b = float(np.max(np.abs(np.log(tr.dv[1:])) / el))
        d = float(np.max(np.abs(tr.dx[1:]) / el))
        sec = np.maximum(np.maximum(np.abs(tr.dxx[1:]), np.abs(tr.dxv[1:])), np.abs(tr.dvv[1:]))
        e = float(np.max(sec * weight / el))
        mv, md, mx, m2 = max(mv, a), max(md, b), max(mx, d), max(m2, e)
        dv_min = min(dv_min, float(np.min(tr.dv)))
        dv_max = max(dv_max, float(np.max(tr.dv)))
        dx_max = max(dx_max, float(np.max(np.abs(tr.dx))))
        per_path[p] = max(a, b, d, e)
    return FlowBoundReport(n_paths, X.size, float(eps), mv, md, mx, m2, dv_min, dv_max, dx_max, per_path)
