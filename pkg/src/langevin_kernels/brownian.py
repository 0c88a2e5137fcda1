"""Discretized scalar Brownian paths.

All randomness comes from numpy's Philox4x64-10 counter-based generator keyed
through ``SeedSequence(seed, spawn_key=...)``. Normals are drawn with numpy's
ziggurat sampler, so a given seed reproduces the same path on every platform
running the same numpy release.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, HorizonError

__all__ = ["BrownianPath", "philox_generator"]

# spawn keys keep unrelated consumers of one seed on disjoint streams
STREAM_PATH = 0
STREAM_REFINE = 1
STREAM_MONTE_CARLO = 2


def philox_generator(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` on the substream identified by ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def _steps(length: float, dt: float) -> int:
    n = int(round(length / dt))
    if n < 1 or abs(n * dt - length) > 1e-9 * max(1.0, length):
        raise DomainError(f"step {dt} does not divide the horizon length {length}")
    return n


@dataclass(frozen=True)
class BrownianPath:
    """Brownian motion on a uniform grid, W(t0) = 0, linear between nodes."""

    t0: float
    dt: float
    increments: np.ndarray
    seed: int | None = None
    level: int = 0
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _cum_int: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 1 or inc.size == 0:
            raise DomainError("a path needs at least one increment")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        w = np.concatenate(([0.0], np.cumsum(inc)))
        w.setflags(write=False)
        object.__setattr__(self, "nodes", w)
        # running integral of the piecewise-linear path, exact per cell
        ci = np.concatenate(([0.0], np.cumsum(0.5 * self.dt * (w[:-1] + w[1:]))))
        ci.setflags(write=False)
        object.__setattr__(self, "_cum_int", ci)

    @classmethod
    def sample(cls, seed: int, t_end: float, dt: float, t0: float = 0.0) -> "BrownianPath":
        n = _steps(t_end - t0, dt)
        rng = philox_generator(seed, STREAM_PATH)
        inc = rng.standard_normal(n) * math.sqrt(dt)
        return cls(t0=float(t0), dt=float(dt), increments=inc, seed=int(seed))

    @classmethod
    def zero(cls, t_end: float, dt: float, t0: float = 0.0) -> "BrownianPath":
        n = _steps(t_end - t0, dt)
        return cls(t0=float(t0), dt=float(dt), increments=np.zeros(n), seed=None)

    @property
    def n_steps(self) -> int:
        return self.increments.size

    @property
    def t_end(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        u = (t - self.t0) / self.dt
        tol = 1e-9
        if np.any(u < -tol) or np.any(u > self.n_steps + tol):
            raise HorizonError(f"time outside path horizon [{self.t0}, {self.t_end}]")
        u = np.clip(u, 0.0, self.n_steps)
        i = np.minimum(np.floor(u + 1e-12).astype(int), self.n_steps - 1)
        frac = np.clip(u - i, 0.0, 1.0)
        return i, frac

    def index_of(self, t: float) -> int:
        """Index of the grid node at time t; t must sit on the grid."""
        u = (t - self.t0) / self.dt
        k = int(round(u))
        if abs(u - k) > 1e-7 or k < 0 or k > self.n_steps:
            raise HorizonError(f"time {t} is not a node of the path grid")
        return k

    def value(self, t):
        """W(t) by linear interpolation."""
        i, f = self._locate(t)
        w = self.nodes
        out = w[i] + f * (w[i + 1] - w[i])
        return out if np.ndim(out) else float(out)

    def integral(self, t):
        """Integral of W over [t0, t], exact for the linear interpolant."""
        i, f = self._locate(t)
        w = self.nodes
        wi = w[i]
        slope = w[i + 1] - w[i]
        part = self.dt * f * (wi + 0.5 * f * slope)
        out = self._cum_int[i] + part
        return out if np.ndim(out) else float(out)

    def increment(self, t_a: float, t_b: float):
        return self.value(t_b) - self.value(t_a)

    def integral_between(self, t_a, t_b):
        """Integral over [t_a, t_b] of (W_r - W_{t_a}) dr."""
        return self.integral(t_b) - self.integral(t_a) - self.value(t_a) * (np.asarray(t_b) - t_a)

    def ito_sum(self, integrand_nodes: np.ndarray, k0: int = 0, k1: int | None = None) -> float:
        """Left-point sum of integrand * dW over grid cells k0..k1-1."""
        k1 = self.n_steps if k1 is None else k1
        f = np.asarray(integrand_nodes, dtype=float)
        return float(np.dot(f[: k1 - k0], self.increments[k0:k1]))

    def refine(self) -> "BrownianPath":
        """Same trajectory on a grid of half the step, midpoints by Brownian bridge."""
        seed = 0 if self.seed is None else self.seed
        rng = philox_generator(seed, STREAM_REFINE, self.level)
        w = self.nodes
        bridge = 0.5 * (w[:-1] + w[1:])
        if self.seed is not None:
            bridge = bridge + rng.standard_normal(self.n_steps) * math.sqrt(self.dt / 4.0)
        fine = np.empty(2 * self.n_steps + 1)
        fine[0::2] = w
        fine[1::2] = bridge
        return BrownianPath(
            t0=self.t0,
            dt=self.dt / 2.0,
            increments=np.diff(fine),
            seed=self.seed,
            level=self.level + 1,
        )

    def restricted(self, t_start: float) -> "BrownianPath":
        """The path re-based at a grid time: W'(r) = W(r) - W(t_start)."""
        k = self.index_of(t_start)
        if k >= self.n_steps:
            raise HorizonError("restriction leaves no increments")
        return BrownianPath(
            t0=self.t0 + k * self.dt,
            dt=self.dt,
            increments=self.increments[k:].copy(),
            seed=self.seed,
            level=self.level,
        )
