"""Closed-form Gaussian kernels.

Covers the generic two-dimensional heat kernel, the Kolmogorov covariance
``Q_t``, the constant-coefficient Langevin density, its conditional version
given an observation path, and the tilted kernel obtained after removing the
transport term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brownian import BrownianPath
from .errors import DomainError
from .geometry import PhasePoint

__all__ = [
    "SymMat2",
    "LangevinParams",
    "heat_kernel",
    "heat_kernel_derivatives",
    "kolmogorov_matrix",
    "langevin_density",
    "conditional_moments",
    "conditional_density",
    "tilted_kernel",
    "gauss_hermite_2d",
]

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SymMat2:
    """Symmetric 2x2 matrix [[a11, a12], [a12, a22]]."""

    a11: float
    a12: float
    a22: float

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    def is_positive_definite(self) -> bool:
        return self.a11 > 0 and self.det > 0

    def inverse(self) -> "SymMat2":
        d = self.det
        if d == 0:
            raise DomainError("singular matrix")
        return SymMat2(self.a22 / d, -self.a12 / d, self.a11 / d)

    def scaled(self, c: float) -> "SymMat2":
        return SymMat2(c * self.a11, c * self.a12, c * self.a22)

    def __add__(self, other: "SymMat2") -> "SymMat2":
        return SymMat2(self.a11 + other.a11, self.a12 + other.a12, self.a22 + other.a22)

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @classmethod
    def from_array(cls, m) -> "SymMat2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    def quad_form(self, x, v):
        return self.a11 * x * x + 2.0 * self.a12 * x * v + self.a22 * v * v

    def cholesky(self) -> np.ndarray:
        if not self.is_positive_definite():
            raise DomainError("matrix is not positive definite")
        l11 = math.sqrt(self.a11)
        l21 = self.a12 / l11
        return np.array([[l11, 0.0], [l21, math.sqrt(self.det / self.a11)]])


@dataclass(frozen=True)
class LangevinParams:
    """Constant diffusion level a and observation coupling sigma."""

    a: float
    sigma: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"a must be positive, got {self.a}")
        if self.sigma < 0 or self.sigma * self.sigma > self.a * (1 + 1e-15):
            raise DomainError(f"sigma must lie in [0, sqrt(a)], got {self.sigma}")

    @property
    def reduced(self) -> float:
        """a - sigma^2, the diffusion left after conditioning on the observation."""
        return max(self.a - self.sigma * self.sigma, 0.0)


def _xv(z):
    if isinstance(z, PhasePoint):
        return z.x, z.v
    x, v = z
    return np.asarray(x, dtype=float), np.asarray(v, dtype=float)


def _scalar(y):
    return float(y) if np.ndim(y) == 0 else y


def heat_kernel(A: SymMat2, z) -> float | np.ndarray:
    """Centered Gaussian density with covariance A, evaluated at z."""
    if not A.is_positive_definite():
        raise DomainError("covariance must be positive definite")
    x, v = _xv(z)
    q = A.inverse().quad_form(x, v)
    return _scalar(np.exp(-0.5 * q) / (_TWO_PI * math.sqrt(A.det)))


def heat_kernel_derivatives(A: SymMat2, z):
    """Value, d/dx, d/dv and d2/dv2 of the centered Gaussian density."""
    if not A.is_positive_definite():
        raise DomainError("covariance must be positive definite")
    x, v = _xv(z)
    P = A.inverse()
    g = np.exp(-0.5 * P.quad_form(x, v)) / (_TWO_PI * math.sqrt(A.det))
    px = P.a11 * x + P.a12 * v
    pv = P.a12 * x + P.a22 * v
    return _scalar(g), _scalar(-g * px), _scalar(-g * pv), _scalar(g * (pv * pv - P.a22))


def kolmogorov_matrix(t: float) -> SymMat2:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    return SymMat2(t**3 / 3.0, t**2 / 2.0, t)


def langevin_density(params: LangevinParams, t: float, z):
    """Transition density of dX = V dt, dV = sqrt(a - sigma^2) dB from the origin."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    c = params.a - params.sigma**2
    if not c > 0:
        raise DomainError("a - sigma^2 must be positive")
    x, v = _xv(z)
    expo = (v * v / t - 3.0 * v * x / t**2 + 3.0 * x * x / t**3) * (2.0 / c)
    return _scalar(math.sqrt(3.0) / (math.pi * t * t * c) * np.exp(-expo))


def conditional_moments(params: LangevinParams, t: float, zeta, w: BrownianPath):
    """Mean and covariance of the state at time w.t0 + t given the observation path.

    The stochastic part of the mean, the integral of (t - r) dW_r, equals the
    time integral of W by parts; it is evaluated exactly for the linearly
    interpolated path so that it agrees with transport along interpolated
    drifts elsewhere in the library.
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    xi, eta = _xv(zeta)
    t_abs = w.t0 + t
    w_t = w.value(t_abs)
    int_w = w.integral(t_abs)
    mean = PhasePoint(float(xi + t * eta - params.sigma * int_w), float(eta - params.sigma * w_t))
    Q = kolmogorov_matrix(t)
    return mean, Q.scaled(params.a - params.sigma**2)


def conditional_density(params: LangevinParams, t: float, z, zeta, w: BrownianPath):
    if params.sigma**2 >= params.a:
        raise DomainError("conditional density needs sigma^2 < a")
    mean, cov = conditional_moments(params, t, zeta, w)
    x, v = _xv(z)
    return heat_kernel(cov, (x - mean.x, v - mean.v))


def tilted_kernel(a: float, t: float, s: float, x, y):
    """Gaussian kernel of (a/2) Vbar_t^2 - d/dt with Vbar_t = d/dy - t d/dx, pole (s, 0, 0).

    Returns the value and its first and second derivatives along Vbar_t.
    """
    if not s < t:
        raise DomainError("tilted kernel needs s < t")
    h = t - s
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    poly = 3.0 * x * x + 3.0 * x * y * (t + s) + y * y * (t * t + t * s + s * s)
    val = math.sqrt(3.0) / (a * math.pi * h * h) * np.exp(-2.0 * poly / (a * h**3))
    # Vbar applied to the quadratic form gives -h (3x + y(t + 2s)); applied twice gives 2h^2
    lin = 3.0 * x + y * (t + 2.0 * s)
    d1 = val * (2.0 / (a * h * h)) * lin
    d2 = val * ((2.0 / (a * h * h)) ** 2 * lin * lin - 4.0 / (a * h))
    return _scalar(val), _scalar(d1), _scalar(d2)


def gauss_hermite_2d(mean, cov: SymMat2, order: int = 20):
    """Nodes (x, v) and weights integrating against the N(mean, cov) law.

    Multiply the weights by the integrand divided by the normal density to
    integrate against Lebesgue measure.
    """
    k, wts = np.polynomial.hermite_e.hermegauss(order)
    wts = wts / math.sqrt(2.0 * math.pi)
    L = cov.cholesky()
    u1, u2 = np.meshgrid(k, k, indexing="ij")
    w = np.outer(wts, wts).ravel()
    u1 = u1.ravel()
    u2 = u2.ravel()
    mx, mv = _xv(mean)
    x = mx + L[0, 0] * u1
    v = mv + L[1, 0] * u1 + L[1, 1] * u2
    return x, v, w


def normal_pdf_2d(mean, cov: SymMat2, x, v):
    mx, mv = _xv(mean)
    return heat_kernel(cov, (np.asarray(x) - mx, np.asarray(v) - mv))
