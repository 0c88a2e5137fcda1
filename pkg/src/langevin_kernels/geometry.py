"""Phase-space points and the homogeneous Lie group of the Langevin operator.

Points of space-time are triples ``(t, x, v)``. The group law is the one that
leaves ``d/dt + v d/dx`` invariant, and the dilations ``(l^2 t, l^3 x, l v)`` make
the operator homogeneous of degree two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "PhasePoint",
    "SpaceTimePoint",
    "SpatialDilation",
    "group_mul",
    "group_inv",
    "dilate",
    "homogeneous_norm",
    "intrinsic_distance",
    "free_flow",
    "IDENTITY",
]


@dataclass(frozen=True)
class PhasePoint:
    """Position-velocity pair."""

    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise DomainError(f"non-finite phase point ({self.x}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.v], dtype=float)

    def __iter__(self):
        yield self.x
        yield self.v


@dataclass(frozen=True)
class SpaceTimePoint:
    """A time together with a phase point."""

    t: float
    z: PhasePoint

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise DomainError(f"non-finite time {self.t}")

    @classmethod
    def of(cls, t: float, x: float, v: float) -> "SpaceTimePoint":
        return cls(float(t), PhasePoint(float(x), float(v)))

    @property
    def x(self) -> float:
        return self.z.x

    @property
    def v(self) -> float:
        return self.z.v

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.t, self.z.x, self.z.v)


IDENTITY = SpaceTimePoint.of(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SpatialDilation:
    """The spatial part diag(l^3, l) of the dilation with scale l."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"dilation scale must be positive, got {self.lam}")

    def matrix(self) -> np.ndarray:
        return np.diag([self.lam**3, self.lam])

    def apply(self, z: PhasePoint) -> PhasePoint:
        return PhasePoint(self.lam**3 * z.x, self.lam * z.v)


def group_mul(p: SpaceTimePoint, q: SpaceTimePoint) -> SpaceTimePoint:
    """Left translation of q by p: (tau, xi, eta) * (t, x, v)."""
    tau, xi, eta = p.as_tuple()
    t, x, v = q.as_tuple()
    return SpaceTimePoint.of(t + tau, x + xi + t * eta, v + eta)


def group_inv(p: SpaceTimePoint) -> SpaceTimePoint:
    tau, xi, eta = p.as_tuple()
    return SpaceTimePoint.of(-tau, -xi + tau * eta, -eta)


def dilate(lam: float, p: SpaceTimePoint) -> SpaceTimePoint:
    if not lam > 0:
        raise DomainError(f"dilation scale must be positive, got {lam}")
    t, x, v = p.as_tuple()
    return SpaceTimePoint.of(lam**2 * t, lam**3 * x, lam * v)


def homogeneous_norm(p: SpaceTimePoint) -> float:
    t, x, v = p.as_tuple()
    # cube root of |x| so the norm is defined on the whole space
    return math.sqrt(abs(t)) + float(np.cbrt(abs(x))) + abs(v)


def intrinsic_distance(p: SpaceTimePoint, q: SpaceTimePoint) -> float:
    """Quasi-distance |q^-1 * p| built from the homogeneous norm."""
    return homogeneous_norm(group_mul(group_inv(q), p))


def free_flow(t: float, z: PhasePoint) -> PhasePoint:
    """Integral curve of v d/dx after time t."""
    return PhasePoint(z.x + t * z.v, z.v)
