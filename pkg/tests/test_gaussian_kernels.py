import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_kernels import BrownianPath, LangevinParams, PhasePoint, SymMat2
from langevin_kernels.errors import DomainError, HorizonError
from langevin_kernels.gaussian_kernels import (
    conditional_density,
    conditional_moments,
    gauss_hermite_2d,
    heat_kernel,
    kolmogorov_matrix,
    langevin_density,
    normal_pdf_2d,
    tilted_kernel,
)

from oracles import HEAT_STD_AT_UNIT_X, LANGEVIN_A2, LANGEVIN_AT_X1, SQRT3_OVER_PI, TILTED


def integrate(f, mean, cov, order=20):
    x, v, w = gauss_hermite_2d(mean, cov, order)
    return math.fsum(w * f(x, v) / normal_pdf_2d(mean, cov, x, v))


# ---------------------------------------------------------------- heat kernel


def test_heat_kernel_values():
    I = SymMat2(1, 0, 1)
    assert heat_kernel(I, (0.0, 0.0)) == pytest.approx(1 / (2 * math.pi), rel=1e-15)
    assert heat_kernel(I, (1.0, 0.0)) == pytest.approx(HEAT_STD_AT_UNIT_X, rel=1e-14)
    assert heat_kernel(kolmogorov_matrix(1.0), (0.0, 0.0)) == pytest.approx(SQRT3_OVER_PI, rel=1e-14)


def test_heat_kernel_rejects_indefinite():
    with pytest.raises(DomainError):
        heat_kernel(SymMat2(1, 2, 1), (0, 0))


spd = st.tuples(st.floats(0.1, 5), st.floats(-0.95, 0.95), st.floats(0.1, 5)).map(
    lambda p: SymMat2(p[0], p[1] * math.sqrt(p[0] * p[2]), p[2]))


@given(spd, st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=40, deadline=None)
def test_heat_kernel_normalised(A, mx, mv):
    mean = PhasePoint(mx, mv)
    # deliberately mismatched proposal so the test is not a tautology
    cov = A.scaled(1.3)
    assert integrate(lambda x, v: heat_kernel(A, (x - mx, v - mv)), mean, cov, 30) == pytest.approx(1.0, abs=1e-8)


# ---------------------------------------------------------------- Kolmogorov matrix


def test_kolmogorov_matrix():
    Q = kolmogorov_matrix(1.0)
    assert (Q.a11, Q.a12, Q.a22) == (1 / 3, 1 / 2, 1.0)
    assert Q.det == pytest.approx(1 / 12, rel=1e-15)
    D = np.diag([8.0, 2.0])
    assert np.allclose(kolmogorov_matrix(4.0).as_array(), D @ Q.as_array() @ D, rtol=1e-15)
    with pytest.raises(DomainError):
        kolmogorov_matrix(0.0)


@given(st.floats(0.01, 50))
def test_kolmogorov_det_and_scaling(t):
    Q = kolmogorov_matrix(t)
    assert Q.det == pytest.approx(t**4 / 12, rel=1e-12)
    D = np.diag([t**1.5, t**0.5])
    assert np.allclose(Q.as_array(), D @ kolmogorov_matrix(1.0).as_array() @ D, rtol=1e-12)


# ---------------------------------------------------------------- Langevin density


def test_langevin_density_values():
    p = LangevinParams(1.0, 0.0)
    assert langevin_density(p, 1.0, (0.0, 0.0)) == pytest.approx(SQRT3_OVER_PI, rel=1e-12)
    assert langevin_density(p, 1.0, (1.0, 0.0)) == pytest.approx(LANGEVIN_AT_X1, rel=1e-12)
    assert langevin_density(LangevinParams(2.0, 0.0), 0.5, (0.1, -0.2)) == pytest.approx(LANGEVIN_A2, rel=1e-12)
    with pytest.raises(DomainError):
        langevin_density(p, -1.0, (0, 0))


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_langevin_density_normalised(t):
    p = LangevinParams(1.0, 0.0)
    total = integrate(lambda x, v: langevin_density(p, t, (x, v)), PhasePoint(0, 0), kolmogorov_matrix(t))
    assert total == pytest.approx(1.0, abs=1e-8)


@given(st.floats(0.05, 3), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.2, 3))
def test_langevin_density_equals_heat_kernel(t, x, v, a):
    p = LangevinParams(a, 0.0)
    assert langevin_density(p, t, (x, v)) == pytest.approx(heat_kernel(kolmogorov_matrix(t).scaled(a), (x, v)),
                                                           rel=1e-11)


def transition(a, t, z, s, zeta):
    h = t - s
    return langevin_density(LangevinParams(a, 0.0), h, (z[0] - zeta[0] - h * zeta[1], z[1] - zeta[1]))


def product_proposal(t, z, rho, s, zeta):
    """Exact product of the two Gaussian factors as a function of the midpoint."""
    hr, hl = rho - s, t - rho
    m1 = np.array([zeta[0] + hr * zeta[1], zeta[1]])
    C1 = kolmogorov_matrix(hr).as_array()
    Einv = np.array([[1.0, -hl], [0.0, 1.0]])
    m2 = Einv @ np.asarray(z)
    C2 = Einv @ kolmogorov_matrix(hl).as_array() @ Einv.T
    P1, P2 = np.linalg.inv(C1), np.linalg.inv(C2)
    C = np.linalg.inv(P1 + P2)
    m = C @ (P1 @ m1 + P2 @ m2)
    return PhasePoint(*m), SymMat2(C[0, 0], C[0, 1], C[1, 1])


@pytest.mark.parametrize("rho", [0.3, 0.5, 0.8])
def test_langevin_chapman_kolmogorov(rho):
    t, s = 1.0, 0.0
    z, zeta = (0.4, -0.3), (0.1, 0.2)
    mean, cov = product_proposal(t, z, rho, s, zeta)
    conv = integrate(lambda x, v: transition(1.0, t, z, rho, (x, v)) * transition(1.0, rho, (x, v), s, zeta),
                     mean, cov.scaled(1.5), 30)
    assert conv == pytest.approx(transition(1.0, t, z, s, zeta), rel=1e-6)


def test_langevin_pde_residual(rng):
    a = 1.3
    for _ in range(20):
        t = rng.uniform(0.2, 2.0)
        # stay in the bulk, where the stencil error is relative to a sizeable value
        ux, uv = rng.uniform(-1.5, 1.5, 2)
        x, v = ux * t**1.5, uv * t**0.5
        f = lambda tt, xx, vv: langevin_density(LangevinParams(a, 0.0), tt, (xx, vv))
        ht, h = 1e-4 * t, 1e-3
        gt = (f(t + ht, x, v) - f(t - ht, x, v)) / (2 * ht)
        gx = (f(t, x + h, v) - f(t, x - h, v)) / (2 * h)
        gvv = (f(t, x, v + h) - 2 * f(t, x, v) + f(t, x, v - h)) / h**2
        res = gt + v * gx - 0.5 * a * gvv
        assert abs(res) / (abs(gt) + abs(0.5 * a * gvv) + 1e-300) < 1e-4


# ---------------------------------------------------------------- conditional law


def test_conditional_moments_examples(path):
    zeta = PhasePoint(0.2, -0.1)
    m, C = conditional_moments(LangevinParams(1.0, 0.0), 1.0, zeta, path)
    assert (m.x, m.v) == pytest.approx((0.2 - 0.1, -0.1), abs=1e-15)
    assert np.allclose(C.as_array(), kolmogorov_matrix(1.0).as_array())
    m, C = conditional_moments(LangevinParams(1.0, 0.5), 1.0, zeta, path)
    assert np.allclose(C.as_array(), 0.75 * kolmogorov_matrix(1.0).as_array(), rtol=1e-15)
    _, C = conditional_moments(LangevinParams(1.0, 1.0), 1.0, zeta, path)
    assert C.as_array() == pytest.approx(np.zeros((2, 2)))


def test_conditional_mean_matches_trapezoid_path_integral():
    w = BrownianPath(t0=0.0, dt=0.25, increments=np.array([0.5, -1.0, 0.25, 0.75]))
    # nodes 0, .5, -.5, -.25, .5 ; trapezoid integral of W over [0, 1]
    int_w = 0.25 * (0.5 * 0 + 0.5 + -0.5 + -0.25 + 0.5 * 0.5)
    m, _ = conditional_moments(LangevinParams(1.0, 0.5), 1.0, PhasePoint(0.0, 1.0), w)
    assert m.x == pytest.approx(1.0 - 0.5 * int_w, abs=1e-15)
    assert m.v == pytest.approx(1.0 - 0.5 * 0.5, abs=1e-15)


def test_conditional_moments_horizon(path):
    with pytest.raises(HorizonError):
        conditional_moments(LangevinParams(1.0, 0.5), 2.0, PhasePoint(0, 0), path)


def test_conditional_density_forms(path, rng):
    p = LangevinParams(1.0, 0.5)
    zeta = PhasePoint(0.1, 0.3)
    m, C = conditional_moments(p, 1.0, zeta, path)
    assert conditional_density(p, 1.0, m, zeta, path) == pytest.approx(1 / (2 * math.pi * math.sqrt(C.det)),
                                                                      rel=1e-14)
    for _ in range(10):
        z = rng.normal(size=2)
        lhs = conditional_density(p, 1.0, z, zeta, path)
        assert lhs == pytest.approx(heat_kernel(C, (z[0] - m.x, z[1] - m.v)), rel=1e-14)
        assert lhs == pytest.approx(langevin_density(p, 1.0, (z[0] - m.x, z[1] - m.v)), rel=1e-12)
    zero = BrownianPath.zero(1.0, 1e-2)
    q = LangevinParams(1.0, 0.0)
    assert conditional_density(q, 1.0, (0.3, 0.2), PhasePoint(0, 0), zero) == pytest.approx(
        langevin_density(q, 1.0, (0.3, 0.2)), rel=1e-14)
    with pytest.raises(DomainError):
        conditional_density(LangevinParams(1.0, 1.0), 1.0, (0, 0), zeta, path)


# ---------------------------------------------------------------- tilted kernel


def test_tilted_kernel_values():
    val, d1, d2 = tilted_kernel(1.0, 1.0, 0.0, 0.0, 0.0)
    assert val == pytest.approx(SQRT3_OVER_PI, rel=1e-14)
    assert d1 == 0.0
    got = tilted_kernel(1.0, 1.5, 0.5, 0.3, -0.4)
    assert got == pytest.approx(TILTED, rel=1e-12)
    with pytest.raises(DomainError):
        tilted_kernel(1.0, 0.0, 1.0, 0, 0)


def test_tilted_kernel_finite_differences(rng):
    for _ in range(20):
        a = rng.uniform(0.5, 2)
        s = rng.uniform(0, 1)
        t = s + rng.uniform(0.3, 2)
        h = t - s
        x, y = rng.uniform(-1.5, 1.5, 2) * (h**1.5, h**0.5)
        h = 1e-4 * math.sqrt(h)
        f = lambda e: tilted_kernel(a, t, s, x - t * e, y + e)[0]
        val, d1, d2 = tilted_kernel(a, t, s, x, y)
        fd1 = (f(h) - f(-h)) / (2 * h)
        fd2 = (f(h) - 2 * val + f(-h)) / h**2
        scale = abs(val) / math.sqrt(t - s)
        assert abs(fd1 - d1) <= 1e-6 * max(abs(d1), scale)
        assert abs(fd2 - d2) <= 1e-5 * max(abs(d2), scale / math.sqrt(t - s))


def test_tilted_kernel_sandwich():
    # |Vbar G_a| <= c (t - s)^{-1/2} G_{a + eps} with eps = 0.1, finite c on a grid
    eps = 0.1
    worst1 = worst2 = 0.0
    for s in (0.0, 0.5):
        for h in (0.1, 0.5, 1.0, 2.0):
            t = s + h
            g = np.linspace(-3, 3, 25)
            x, y = np.meshgrid(g * h**1.5, g * h**0.5, indexing="ij")
            val, d1, d2 = tilted_kernel(1.0, t, s, x, y)
            ref = tilted_kernel(1.0 + eps, t, s, x, y)[0]
            ok = ref > 1e-250
            worst1 = max(worst1, float(np.max(np.abs(d1[ok]) * math.sqrt(h) / ref[ok])))
            worst2 = max(worst2, float(np.max(np.abs(d2[ok]) * h / ref[ok])))
    assert math.isfinite(worst1) and math.isfinite(worst2)
    assert worst1 < 50 and worst2 < 200
