"""Reduction of the stochastic Langevin equation to a random Kolmogorov PDE.

Composing a solution with the stochastic flow of the velocity removes the
``sigma d_v u dW`` term. What remains is a deterministic equation, path by
path, with coefficients

    a_K = (a - sigma^2)(x, gamma) / (d_v gamma)^2
    b_K = -(sigma d_2 sigma / d_v gamma + (a - sigma^2) d_vv gamma / (2 (d_v gamma)^3))
    Y   = (gamma, -gamma d_x gamma / d_v gamma)

(``d_2 sigma`` is the partial of sigma in its velocity slot, evaluated at
(x, gamma)). The parametrix is run on that problem and its output is mapped
back through the inverse flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brownian import BrownianPath
from .coefficients import KolmogorovCoefficients, SpdeCoefficients
from .errors import DomainError, HorizonError
from .flow_engine import FlowTable, inverse_flow
from .gaussian_kernels import LangevinParams
from .geometry import PhasePoint
from .parametrix_solver import KernelEvaluation, ParametrixConfig, fundamental_solution_batch

__all__ = [
    "TransformedProblem",
    "wentzell_transform",
    "stochastic_fundamental_solution",
    "stochastic_fundamental_solution_batch",
    "AssembledKernel",
    "ClosedFormKernel",
    "spde_residual",
    "ResidualReport",
]


@dataclass(frozen=True)
class TransformedProblem:
    """The Kolmogorov data of one Brownian path together with its generating flow."""

    kolmogorov: KolmogorovCoefficients
    flow: FlowTable
    spde: SpdeCoefficients
    path: BrownianPath
    tau: float

    @property
    def t_end(self) -> float:
        return self.flow.t_end

    def flow_derivatives(self, t, x, v):
        """(gamma, d_x gamma, d_v gamma, d_vv gamma) at time t."""
        return self.flow.evaluate(t, x, v)

    def inverse(self, t, x, v_target, tol: float = 1e-12):
        """Velocity u with gamma_{t,tau}(x, u) = v_target."""
        if self.flow.const_shift:
            g = self.flow.evaluate(t, x, np.zeros_like(np.asarray(v_target, dtype=float)))[0]
            return np.asarray(v_target, dtype=float) - g
        return inverse_flow(self.flow, t, x, v_target, tol)


def _shift_bundle(c: SpdeCoefficients, table: FlowTable, w: BrownianPath, tau: float) -> KolmogorovCoefficients:
    """Transformed data when sigma depends on time only: Y = (v + shift(t), 0)."""
    k0 = w.index_of(tau)
    times = table.times
    shift = table.traj.gamma[:, 0, 0] - table.traj.v[0, 0]
    # running integral of the piecewise linear shift, exact per cell
    cum = np.concatenate(([0.0], np.cumsum(0.5 * w.dt * (shift[:-1] + shift[1:]))))

    def locate(t):
        u = (np.asarray(t, dtype=float) - tau) / w.dt
        if np.any(u < -1e-7) or np.any(u > times.size - 1 + 1e-7):
            raise HorizonError("time outside the transformed problem horizon")
        k = np.clip(np.floor(u + 1e-9).astype(int), 0, times.size - 2)
        f = np.clip(u - k, 0.0, 1.0)
        return k, f

    def shift_at(t):
        k, f = locate(t)
        return shift[k] + f * (shift[k + 1] - shift[k])

    def shift_int(t):
        k, f = locate(t)
        return cum[k] + w.dt * f * (shift[k] + 0.5 * f * (shift[k + 1] - shift[k]))

    def sig2(t):
        t = np.asarray(t, dtype=float)
        s = np.asarray(c.sigma(t, np.zeros_like(t), np.zeros_like(t)), dtype=float)
        return s * s

    def a(t, x, v):
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        return np.asarray(c.a(t, x, v + shift_at(t)), dtype=float) - sig2(t)

    def b(t, x, v):
        return np.zeros(np.broadcast(t, x, v).shape)

    def drift(t, x, v):
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        return v + shift_at(t), np.zeros(t.shape)

    def jac(t, x, v):
        shape = np.broadcast(t, x, v).shape
        z = np.zeros(shape)
        return z, np.ones(shape), z, z

    def flow_map(s, x, v, t):
        s, x, v, t = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (s, x, v, t)))
        h = t - s
        return x + h * v + shift_int(t) - shift_int(s), v.copy(), h

    constant_a = c.name == "constant"
    return KolmogorovCoefficients(
        a=a,
        b=b,
        drift=drift,
        jacobian=jac,
        lambda1=None,
        lambda2=1.0,
        alpha=c.alpha,
        flow_map=flow_map,
        breakpoints=w.times[k0:],
        name=f"transformed-{c.name}",
        params=dict(c.params),
        frozen_exact=constant_a,
    )


def _generic_bundle(c: SpdeCoefficients, table: FlowTable) -> KolmogorovCoefficients:
    def fields(t, x, v):
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        g, gx, gv, gvv = table.evaluate(t, x, v)
        return t, x, g, gx, gv, gvv

    def a(t, x, v):
        t, x, g, _, gv, _ = fields(t, x, v)
        s = c.sigma(t, x, g)
        return (c.a(t, x, g) - s * s) / (gv * gv)

    def b(t, x, v):
        t, x, g, _, gv, gvv = fields(t, x, v)
        s = c.sigma(t, x, g)
        s2 = c.sigma_partials(t, x, g)["v"]
        red = c.a(t, x, g) - s * s
        return -(s * s2 / gv + red * gvv / (2.0 * gv**3))

    def drift(t, x, v):
        _, _, g, gx, gv, _ = fields(t, x, v)
        return g, -g * gx / gv

    def jac(t, x, v):
        t, x, g, gx, gv, gvv = fields(t, x, v)
        gxx, gxv = table.second_derivatives(t, x, v)
        r = gx / gv
        # Y2 = -gamma r with r = gx / gv
        r_x = gxx / gv - gx * gxv / (gv * gv)
        r_v = gxv / gv - gx * gvv / (gv * gv)
        return gx, gv, -(gx * r + g * r_x), -(gv * r + g * r_v)

    return KolmogorovCoefficients(
        a=a,
        b=b,
        drift=drift,
        jacobian=jac,
        alpha=c.alpha,
        flow_map=None,
        breakpoints=table.times,
        name=f"transformed-{c.name}",
        params=dict(c.params),
    )


def wentzell_transform(c: SpdeCoefficients, w: BrownianPath, tau: float, t_end: float | None = None,
                       half_width: float = 8.0, n_table: int = 65) -> TransformedProblem:
    """Bind the stochastic equation to one path and return its Kolmogorov form."""
    t_end = w.t_end if t_end is None else float(t_end)
    if tau < w.t0 - 1e-12 or t_end > w.t_end + 1e-9:
        raise HorizonError("transform horizon exceeds the Brownian path")
    if not tau < t_end:
        raise DomainError("transform needs tau < t_end")
    table = FlowTable(c, w, tau, t_end, half_width=half_width, n=n_table)
    if c.spatially_constant_sigma:
        kol = _shift_bundle(c, table, w, tau)
    else:
        kol = _generic_bundle(c, table)
    return TransformedProblem(kolmogorov=kol, flow=table, spde=c, path=w, tau=float(tau))


def stochastic_fundamental_solution_batch(problem: TransformedProblem, config: ParametrixConfig, t, x, v,
                                          zeta: PhasePoint):
    """Gamma for the stochastic equation at arrays of (t, x, v) for the pole (tau, zeta)."""
    t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
    if not np.all(t > problem.tau):
        raise DomainError("evaluation needs t > tau")
    u = problem.inverse(t, x, v)
    G, Gu, Guu = fundamental_solution_batch(problem.kolmogorov, config, t, x, u, problem.tau, zeta.x, zeta.v)
    _, _, gv, gvv = problem.flow_derivatives(t, x, u)
    # chain rule through the inverse flow: d_v g = 1/gv, d_vv g = -gvv/gv^3
    dv = Gu / gv
    dvv = Guu / (gv * gv) - Gu * gvv / gv**3
    return G, dv, dvv


def stochastic_fundamental_solution(c: SpdeCoefficients, w: BrownianPath, tau: float, config: ParametrixConfig,
                                    t: float, z: PhasePoint, zeta: PhasePoint,
                                    problem: TransformedProblem | None = None) -> KernelEvaluation:
    """Gamma(t, z; tau, zeta) by parametrix on the transformed problem and the inverse flow."""
    if not tau < t:
        raise DomainError("stochastic fundamental solution needs tau < t")
    problem = problem or wentzell_transform(c, w, tau)
    g, dv, dvv = stochastic_fundamental_solution_batch(problem, config, t, z.x, z.v, zeta)
    return KernelEvaluation(float(g), float(dv), float(dvv), "transformed")


class AssembledKernel:
    """Callable (t, x, v) -> (value, dv, dvv) for a fixed pole on a fixed path."""

    def __init__(self, problem: TransformedProblem, config: ParametrixConfig, zeta: PhasePoint):
        self.problem = problem
        self.config = config
        self.zeta = zeta

    def __call__(self, t, x, v):
        return stochastic_fundamental_solution_batch(self.problem, self.config, t, x, v, self.zeta)


class ClosedFormKernel:
    """Conditional Gaussian density for constant a and sigma, pole (tau, zeta)."""

    def __init__(self, params: LangevinParams, w: BrownianPath, tau: float, zeta: PhasePoint):
        self.params = params
        self.path = w.restricted(tau) if tau > w.t0 else w
        self.tau = float(tau)
        self.zeta = zeta

    def __call__(self, t, x, v):
        t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (t, x, v)))
        h = t - self.tau
        if not np.all(h > 0):
            raise DomainError("closed-form kernel needs t > tau")
        sig = self.params.sigma
        # same moments as conditional_moments, vectorised over t
        mx = self.zeta.x + h * self.zeta.v - sig * np.asarray(self.path.integral(t))
        mv = self.zeta.v - sig * np.asarray(self.path.value(t))
        red = self.params.a - sig * sig
        X = x - mx
        V = v - mv
        p11, p12, p22 = 12.0 / (red * h**3), -6.0 / (red * h * h), 4.0 / (red * h)
        g = math.sqrt(3.0) / (math.pi * red * h * h) * np.exp(-0.5 * (p11 * X * X + 2 * p12 * X * V + p22 * V * V))
        pv = p12 * X + p22 * V
        return g, -g * pv, g * (pv * pv - p22)


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    scale: float
    n_steps: int

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else abs(self.residual)


def spde_residual(c: SpdeCoefficients, w: BrownianPath, tau: float, kernel, t0: float, t: float, z: PhasePoint,
                  zeta: PhasePoint | None = None) -> ResidualReport:
    """Defect of the Ito form of the equation along the free transport curve.

    ``kernel(t, x, v)`` returns (value, dv, dvv) for the pole (tau, zeta); it
    is evaluated at every grid time in [t0, t]. The time integral uses the
    trapezoid rule and the stochastic integral the left-point sum over the same
    increments that drive the path.
    """
    if not tau < t0 <= t:
        raise DomainError("residual needs tau < t0 <= t")
    k0 = w.index_of(t0)
    k1 = w.index_of(t)
    if k1 == k0:
        return ResidualReport(0.0, 0.0, 0)
    times = w.times[k0:k1 + 1]
    xs = z.x + (times - t0) * z.v
    vs = np.full_like(times, z.v)
    val, dv, dvv = kernel(times, xs, vs)
    a = np.asarray(c.a(times, xs, vs), dtype=float)
    sig = np.asarray(c.sigma(times, xs, vs), dtype=float)
    drift = 0.5 * a * dvv
    ds_term = math.fsum(0.5 * w.dt * (drift[:-1] + drift[1:]))
    dw_term = math.fsum(sig[:-1] * dv[:-1] * w.increments[k0:k1])
    res = float(val[-1]) - float(val[0]) - ds_term - dw_term
    scale = abs(float(val[0])) + abs(float(val[-1]))
    return ResidualReport(res, scale, int(k1 - k0))
