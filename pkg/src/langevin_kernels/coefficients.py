"""Coefficient bundles, built-in parametric families and assumption checks.

Two bundles exist. ``SpdeCoefficients`` carries the diffusion ``a`` and the
observation coupling ``sigma`` of the stochastic equation. ``KolmogorovCoefficients``
carries ``(a, b, Y)`` of the deterministic operator

    (1/2) a d_vv + b d_v - <Y, grad> - d_t

that the parametrix machinery works with. Every field is a vectorised callable
``f(t, x, v)`` accepting numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

__all__ = [
    "SpdeCoefficients",
    "KolmogorovCoefficients",
    "GridSpec",
    "AssumptionReport",
    "HormanderReport",
    "builtin_family",
    "FAMILIES",
    "validate_assumptions",
    "hormander_check",
]

Field = Callable[[object, object, object], np.ndarray]

SIGMA_PARTIALS = ("x", "v", "xx", "xv", "vv", "xxx", "xxv", "xvv", "vvv")


def _const(c: float) -> Field:
    def f(t, x, v):
        return np.full(np.broadcast(t, x, v).shape, float(c))

    return f


def _zero_partials(t, x, v):
    z = np.zeros(np.broadcast(t, x, v).shape)
    return {k: z for k in SIGMA_PARTIALS}


@dataclass(frozen=True)
class SpdeCoefficients:
    """Coefficients a and sigma of the stochastic Fokker-Planck equation.

    ``sigma_partials(t, x, v)`` returns a dict with the spatial partial
    derivatives of sigma up to order three, keyed ``"x"``, ``"v"``, ``"xx"``...
    ``spatially_constant_sigma`` marks sigma as a function of time only, which
    turns the stochastic flow into a pure shift.
    """

    a: Field
    sigma: Field
    sigma_partials: Callable[..., dict]
    alpha: float = 0.5
    m_lower: float | None = None
    eps: float | None = None
    M: float | None = None
    spatially_constant_sigma: bool = False
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    # (code, p0, p1) tag understood by the compiled flow kernel, or None
    flow_tag: tuple | None = None


@dataclass(frozen=True)
class KolmogorovCoefficients:
    """Data (a, b, Y) of a degenerate Kolmogorov operator.

    ``jacobian(t, x, v)`` returns ``(dY1/dx, dY1/dv, dY2/dx, dY2/dv)``.
    ``flow_map(s, x, v, t)``, when present, gives the integral curve of Y in
    closed form as ``(x_t, v_t, K)`` with K the integral of dY1/dv along it.
    ``breakpoints`` lists times where the fields may have kinks in t.
    """

    a: Field
    b: Field
    drift: Callable
    jacobian: Callable
    lambda1: float | None = None
    lambda2: float | None = None
    alpha: float = 0.5
    flow_map: Callable | None = None
    breakpoints: np.ndarray | None = None
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    # tag for the compiled kernel: ("xsin", a0, amp, freq, b0, drift_eps) or None
    kernel_tag: tuple | None = None
    # set only when (KZ)_1 vanishes identically (constant a, b = 0, drift affine
    # along every curve), so the correction series may be skipped
    frozen_exact: bool = False

    def kappa(self, t, x, v):
        return self.jacobian(t, x, v)[1]


# ---------------------------------------------------------------- families


def _free_flow_map(s, x, v, t):
    h = np.asarray(t) - np.asarray(s)
    return x + h * v, v + 0.0 * h, h + 0.0 * v


def _langevin_fields(a_field, b_field, **meta):
    def drift(t, x, v):
        v = np.asarray(v, dtype=float)
        shape = np.broadcast(t, x, v).shape
        return np.broadcast_to(v, shape).copy(), np.zeros(shape)

    def jac(t, x, v):
        shape = np.broadcast(t, x, v).shape
        z = np.zeros(shape)
        return z, np.ones(shape), z, z

    return KolmogorovCoefficients(
        a=a_field, b=b_field, drift=drift, jacobian=jac, flow_map=_free_flow_map, **meta
    )


def _family_constant(p):
    a = float(p.get("a", 1.0))
    sigma = float(p.get("sigma", 0.0))
    if not a > 0:
        raise ConfigError("a must be positive", key="a")
    return SpdeCoefficients(
        a=_const(a),
        sigma=_const(sigma),
        sigma_partials=_zero_partials,
        alpha=float(p.get("alpha", 0.5)),
        m_lower=a - sigma * sigma,
        eps=float(p.get("eps", 0.25)),
        M=0.0,
        spatially_constant_sigma=True,
        name="constant",
        params=MappingProxyType({"a": a, "sigma": sigma}),
        flow_tag=(0, sigma, 0.0),
    )


def _family_langevin_drift(p):
    a = float(p.get("a", 1.0))
    b = float(p.get("b", 0.0))
    if not a > 0:
        raise ConfigError("a must be positive", key="a")
    return _langevin_fields(
        _const(a),
        _const(b),
        lambda1=max(a, 1.0 / a, abs(b)),
        lambda2=1.0,
        alpha=float(p.get("alpha", 0.5)),
        name="langevin-drift",
        params=MappingProxyType({"a": a, "b": b}),
        kernel_tag=("xsin", a, 0.0, 0.0, b, 0.0),
    )


def _family_sin_perturbed_a(p):
    base = float(p.get("base", 1.0))
    amp = float(p.get("amp", 0.05))
    freq = float(p.get("freq", 1.0))
    alpha = float(p.get("alpha", 0.5))
    kind = str(p.get("kind", "kolmogorov"))

    def a(t, x, v):
        x = np.asarray(x, dtype=float)
        return base + amp * np.sin(freq * np.broadcast_to(x, np.broadcast(t, x, v).shape))

    lo = base - abs(amp)
    meta = MappingProxyType({"base": base, "amp": amp, "freq": freq})
    if kind == "spde":
        sigma = float(p.get("sigma", 0.0))
        return SpdeCoefficients(
            a=a,
            sigma=_const(sigma),
            sigma_partials=_zero_partials,
            alpha=alpha,
            m_lower=lo - sigma * sigma,
            eps=float(p.get("eps", 0.25)),
            M=0.0,
            spatially_constant_sigma=True,
            name="sin-perturbed-a",
            params=MappingProxyType({**meta, "sigma": sigma}),
            flow_tag=(0, sigma, 0.0),
        )
    if kind != "kolmogorov":
        raise ConfigError(f"unknown kind {kind!r}", key="kind")
    lam1 = max(base + abs(amp), 1.0 / lo if lo > 0 else math.inf)
    return _langevin_fields(
        a,
        _const(0.0),
        lambda1=lam1,
        lambda2=1.0,
        alpha=alpha,
        name="sin-perturbed-a",
        params=meta,
        kernel_tag=("xsin", base, amp, freq, 0.0, 0.0),
    )


def _family_perturbed_drift(p):
    a = float(p.get("a", 1.0))
    eps = float(p.get("eps", 0.1))

    def drift(t, x, v):
        v = np.asarray(v, dtype=float)
        shape = np.broadcast(t, x, v).shape
        v = np.broadcast_to(v, shape)
        return v + eps * np.sin(v), np.zeros(shape)

    def jac(t, x, v):
        v = np.asarray(v, dtype=float)
        shape = np.broadcast(t, x, v).shape
        z = np.zeros(shape)
        return z, 1.0 + eps * np.cos(np.broadcast_to(v, shape)), z, z

    def flow_map(s, x, v, t):
        h = np.asarray(t) - np.asarray(s)
        return x + h * (v + eps * np.sin(v)), v + 0.0 * h, h * (1.0 + eps * np.cos(v))

    return KolmogorovCoefficients(
        a=_const(a),
        b=_const(0.0),
        drift=drift,
        jacobian=jac,
        lambda1=max(a, 1.0 / a),
        lambda2=max(1.0 + abs(eps), 1.0 / (1.0 - abs(eps))) if abs(eps) < 1 else math.inf,
        alpha=float(p.get("alpha", 0.5)),
        flow_map=flow_map,
        name="perturbed-drift",
        params=MappingProxyType({"a": a, "eps": eps}),
        kernel_tag=("xsin", a, 0.0, 0.0, 0.0, eps),
    )


def _flattening_partials(s1):
    def partials(t, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        x, v = np.broadcast_arrays(x, v)
        g = 1.0 / (1.0 + x * x + v * v)
        g2, g3, g4 = g * g, g**3, g**4
        d = {
            "x": -2.0 * x * g2,
            "v": -2.0 * v * g2,
            "xx": -2.0 * g2 + 8.0 * x * x * g3,
            "xv": 8.0 * x * v * g3,
            "vv": -2.0 * g2 + 8.0 * v * v * g3,
            "xxx": 24.0 * x * g3 - 48.0 * x**3 * g4,
            "xxv": 8.0 * v * g3 - 48.0 * x * x * v * g4,
            "xvv": 8.0 * x * g3 - 48.0 * x * v * v * g4,
            "vvv": 24.0 * v * g3 - 48.0 * v**3 * g4,
        }
        shape = np.broadcast(t, x).shape
        return {k: np.broadcast_to(s1 * val, shape) for k, val in d.items()}

    return partials


def flattening_first_order_bound(sigma1: float, eps: float) -> float:
    """sup of (1 + r^2)^eps |d sigma| for a single first-order partial."""
    r2 = 1.0 / (3.0 - 2.0 * eps)
    return 2.0 * abs(sigma1) * math.sqrt(r2) * (1.0 + r2) ** (eps - 2.0)


def _family_flattening_sigma(p):
    s0 = float(p.get("sigma0", 0.3))
    s1 = float(p.get("sigma1", 0.2))
    a = float(p.get("a", 1.0))
    eps = float(p.get("eps", 0.25))
    if not 0 < eps < 0.5:
        raise ConfigError("eps must lie in (0, 1/2)", key="eps")

    def sigma(t, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        out = s0 + s1 / (1.0 + x * x + v * v)
        return np.broadcast_to(out, np.broadcast(t, out).shape)

    # sigma ranges over (s0, s0 + s1] when s1 > 0
    sig_max = max(abs(s0), abs(s0 + s1))
    return SpdeCoefficients(
        a=_const(a),
        sigma=sigma,
        sigma_partials=_flattening_partials(s1),
        alpha=float(p.get("alpha", 0.5)),
        m_lower=a - sig_max * sig_max,
        eps=eps,
        M=flattening_first_order_bound(s1, eps),
        spatially_constant_sigma=(s1 == 0.0),
        name="flattening-sigma",
        params=MappingProxyType({"sigma0": s0, "sigma1": s1, "a": a, "eps": eps}),
        flow_tag=(1, s0, s1),
    )


FAMILIES = {
    "constant": _family_constant,
    "sin-perturbed-a": _family_sin_perturbed_a,
    "flattening-sigma": _family_flattening_sigma,
    "langevin-drift": _family_langevin_drift,
    "perturbed-drift": _family_perturbed_drift,
}


def builtin_family(name: str, params: Mapping | None = None):
    """Construct a built-in coefficient bundle by name."""
    try:
        make = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown coefficient family {name!r}", key="family") from None
    return make(dict(params or {}))


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class GridSpec:
    """Tensor sampling grid over [x_lo, x_hi] x [v_lo, v_hi] x [t_lo, t_hi]."""

    x_range: tuple[float, float] = (-10.0, 10.0)
    v_range: tuple[float, float] = (-10.0, 10.0)
    t_range: tuple[float, float] = (0.0, 1.0)
    n_space: int = 101
    n_time: int = 3

    def axes(self):
        xs = np.linspace(*self.x_range, self.n_space)
        vs = np.linspace(*self.v_range, self.n_space)
        ts = np.linspace(*self.t_range, self.n_time)
        return ts, xs, vs

    def mesh(self):
        ts, xs, vs = self.axes()
        return np.meshgrid(ts, xs, vs, indexing="ij")


@dataclass
class AssumptionReport:
    lambda1: float | None = None
    lambda2: float | None = None
    holder_sup: float = 0.0
    coercivity_min: float | None = None
    flattening_first: float | None = None
    flattening_higher: float | None = None
    passed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def _holder_sup(values: np.ndarray, dx: float, dv: float, alpha: float,
                dmin: float = 1e-3, dmax: float = 1.0) -> float:
    """Largest |f(z) - f(w)| / |z - w|^alpha over grid pairs at distance in [dmin, dmax]."""
    best = 0.0
    nx, nv = values.shape[-2:]
    imax = int(dmax / dx) + 1
    jmax = int(dmax / dv) + 1
    for i in range(0, min(imax, nx - 1) + 1):
        for j in range(-min(jmax, nv - 1), min(jmax, nv - 1) + 1):
            if i == 0 and j <= 0:
                continue
            d = math.hypot(i * dx, j * dv)
            if not dmin <= d <= dmax:
                continue
            a = values[..., i:, max(j, 0): nv + min(j, 0)]
            b = values[..., : nx - i, max(-j, 0): nv - max(j, 0)]
            q = float(np.max(np.abs(a - b))) / d**alpha
            best = max(best, q)
    return best


def _flattening_ok(weighted: np.ndarray, r: np.ndarray, r_max: float) -> bool:
    """Weighted derivative sup must not be attained near the edge of the grid."""
    outer = r >= 0.8 * r_max
    w_out = float(np.max(weighted[..., outer])) if np.any(outer) else 0.0
    w_in = float(np.max(weighted[..., ~outer])) if np.any(~outer) else 0.0
    return bool(np.isfinite(w_in)) and w_out <= w_in + 1e-300


def validate_assumptions(c, grid: GridSpec | None = None) -> AssumptionReport:
    """Sample the coefficient bundle on a grid and estimate the assumption constants."""
    grid = grid or GridSpec()
    T, X, V = grid.mesh()
    ts, xs, vs = grid.axes()
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    dv = vs[1] - vs[0] if vs.size > 1 else 1.0
    rep = AssumptionReport()
    alpha = c.alpha
    a = np.asarray(c.a(T, X, V), dtype=float)
    if isinstance(c, SpdeCoefficients):
        s = np.asarray(c.sigma(T, X, V), dtype=float)
        d = c.sigma_partials(T, X, V)
        rep.holder_sup = _holder_sup(a, dx, dv, alpha)
        rep.coercivity_min = float(np.min(a - s * s))
        r2 = X * X + V * V
        eps = c.eps if c.eps is not None else 0.25
        first = np.max(np.stack([np.abs(d[k]) for k in ("x", "v")]), axis=0) * (1 + r2) ** eps
        higher = np.max(np.stack([np.abs(d[k]) for k in SIGMA_PARTIALS[2:]]), axis=0)
        higher = higher * (1 + r2) ** (0.5 + eps)
        rep.flattening_first = float(np.max(first))
        rep.flattening_higher = float(np.max(higher))
        r = np.sqrt(r2)
        r_max = float(np.max(r))
        bounded = all(np.all(np.isfinite(d[k])) for k in SIGMA_PARTIALS)
        rep.passed = {
            "regularity": bool(np.all(np.isfinite(a)) and bounded and np.isfinite(rep.holder_sup)),
            "coercivity": rep.coercivity_min > 0,
            "flattening": _flattening_ok(first, r, r_max) and _flattening_ok(higher, r, r_max),
        }
        return rep
    if not isinstance(c, KolmogorovCoefficients):
        raise ConfigError("validate_assumptions needs a coefficient bundle")
    b = np.asarray(c.b(T, X, V), dtype=float)
    y1x, y1v, y2x, y2v = (np.asarray(j, dtype=float) for j in c.jacobian(T, X, V))
    hold = max(_holder_sup(a, dx, dv, alpha), _holder_sup(b, dx, dv, alpha),
               _holder_sup(y1v, dx, dv, alpha))
    rep.holder_sup = hold
    a_min = float(np.min(a))
    inv_a = 1.0 / a_min if a_min > 0 else math.inf
    rep.lambda1 = max(float(np.max(a)), inv_a, float(np.max(np.abs(b))), hold)
    # Lipschitz constant of Y from the largest singular value of its Jacobian
    J = np.stack([np.stack([y1x, y1v], -1), np.stack([y2x, y2v], -1)], -2)
    lip = float(np.max(np.linalg.norm(J.reshape(-1, 2, 2), ord=2, axis=(1, 2))))
    k_min = float(np.min(y1v))
    inv_k = 1.0 / k_min if k_min > 0 else math.inf
    rep.lambda2 = max(lip, float(np.max(y1v)), inv_k)
    rep.passed = {
        "ellipticity": bool(a_min > 0 and np.isfinite(rep.lambda1)),
        "drift": bool(k_min > 0 and np.isfinite(rep.lambda2)),
    }
    return rep


@dataclass(frozen=True)
class HormanderReport:
    matrix: np.ndarray
    det: float
    passed: bool


def hormander_check(c: KolmogorovCoefficients, p, tol: float = 1e-12) -> HormanderReport:
    """Span test for sqrt(a) d_v and its bracket with Y at a space-time point."""
    t, x, v = p.as_tuple() if hasattr(p, "as_tuple") else p
    a = float(c.a(t, x, v))
    h = 1e-6 * (1.0 + abs(v))
    y1x, y1v, y2x, y2v = (float(j) for j in c.jacobian(t, x, v))
    y1, y2 = (float(q) for q in c.drift(t, x, v))
    # d/dx and d/dv of sqrt(a) by central differences
    ra_x = (math.sqrt(float(c.a(t, x + h, v))) - math.sqrt(float(c.a(t, x - h, v)))) / (2 * h)
    ra_v = (math.sqrt(float(c.a(t, x, v + h))) - math.sqrt(float(c.a(t, x, v - h)))) / (2 * h)
    ra = math.sqrt(a)
    # [sqrt(a) d_v, Y] = sqrt(a) dY/dv - (Y . grad sqrt(a)) e2
    comm = np.array([ra * y1v, ra * y2v - (y1 * ra_x + y2 * ra_v)])
    m = np.column_stack([[0.0, ra], comm])
    det = float(np.linalg.det(m))
    return HormanderReport(matrix=m, det=det, passed=abs(det) > tol)
