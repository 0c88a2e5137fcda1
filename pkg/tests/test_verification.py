import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_kernels import (
    BrownianPath,
    LangevinParams,
    ParametrixConfig,
    PhasePoint,
    SpaceTimePoint,
    builtin_family,
)
from langevin_kernels.errors import ControlError, DomainError
from langevin_kernels.gaussian_kernels import kolmogorov_matrix
from langevin_kernels.spde_assembler import ClosedFormKernel
from langevin_kernels.verification import (
    FixedPoleKernel,
    LangevinTransition,
    ParametrixKernel,
    SandwichGrid,
    chapman_kolmogorov_defect,
    ck_quadrature,
    flow_bound_check,
    mc_conditional_check,
    minimal_energy_control,
    pde_residual,
    sandwich_estimate,
)

from oracles import CONTROL_ENERGY, SQRT3_OVER_PI

ORIGIN = PhasePoint(0.0, 0.0)


# ---------------------------------------------------------------- adapters


def test_transition_adapter():
    k = LangevinTransition(1.0)
    assert float(k(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)[0]) == pytest.approx(SQRT3_OVER_PI, rel=1e-14)
    with pytest.raises(DomainError):
        LangevinTransition(0.0)
    with pytest.raises(DomainError):
        k(0.0, 0, 0, 1.0, 0, 0)


def test_fixed_pole_adapter():
    w = BrownianPath.zero(1.0, 1e-2)
    k = FixedPoleKernel(ClosedFormKernel(LangevinParams(1.0, 0.0), w, 0.0, ORIGIN), 0.0, ORIGIN)
    assert float(k(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)[0]) == pytest.approx(SQRT3_OVER_PI, rel=1e-12)
    with pytest.raises(DomainError):
        k(1.0, 0.0, 0.0, 0.1, 0.0, 0.0)


# ---------------------------------------------------------------- residual


def test_pde_residual_closed_form(rng):
    c = builtin_family("langevin-drift", {"a": 1.4, "b": 0.0})
    k = LangevinTransition(1.4)
    for _ in range(10):
        t = rng.uniform(0.3, 1.5)
        z = PhasePoint(*(rng.uniform(-1, 1, 2) * (t**1.5, t**0.5)))
        r = pde_residual(k, c, SpaceTimePoint(t, z), (0.0, ORIGIN))
        assert r.relative < 1e-4


def test_pde_residual_with_first_order_term():
    c = builtin_family("langevin-drift", {"a": 1.0, "b": 0.4})
    r = pde_residual(LangevinTransition(1.0, 0.4), c, SpaceTimePoint.of(1.0, 0.3, 0.2), (0.0, ORIGIN))
    assert r.relative < 1e-4
    # the frozen Gaussian ignores b, so its residual is of the order of b
    r0 = pde_residual(ParametrixKernel(c, order=0), c, SpaceTimePoint.of(1.0, 0.3, 0.2), (0.0, ORIGIN))
    assert r0.relative > 1e-2


def test_pde_residual_detects_wrong_kernel():
    c = builtin_family("langevin-drift", {"a": 1.0})
    r = pde_residual(LangevinTransition(2.0), c, SpaceTimePoint.of(1.0, 0.2, 0.1), (0.0, ORIGIN))
    assert r.relative > 1e-2
    with pytest.raises(DomainError):
        pde_residual(LangevinTransition(1.0), c, SpaceTimePoint.of(0.0, 0, 0), (0.0, ORIGIN))


def test_frozen_residual_scales_with_perturbation():
    probe = SpaceTimePoint.of(0.5, 0.1, -0.2)
    res = []
    for amp in (0.02, 0.04, 0.08):
        c = builtin_family("sin-perturbed-a", {"amp": amp})
        res.append(abs(pde_residual(ParametrixKernel(c, order=0), c, probe, (0.0, ORIGIN)).residual))
    assert res[0] < res[1] < res[2]
    assert res[2] / res[1] == pytest.approx(2.0, rel=0.1)


# ---------------------------------------------------------------- Chapman-Kolmogorov


@given(st.floats(0.2, 0.8), st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=15, deadline=None)
def test_ck_constant_coefficients(rho, x, v):
    c = builtin_family("langevin-drift", {"a": 1.0})
    z, zeta = PhasePoint(x, v), PhasePoint(0.1, -0.1)
    quad = ck_quadrature(c, 1.0, z, rho, 0.0, zeta)
    rep = chapman_kolmogorov_defect(LangevinTransition(1.0), 1.0, z, rho, 0.0, zeta, quad)
    assert rep.defect <= 1e-8 * max(rep.direct, 1e-3)


def test_ck_near_the_pole():
    c = builtin_family("langevin-drift", {"a": 1.0})
    z = PhasePoint(0.2, 0.1)
    for rho in (1e-2, 1e-3, 1e-4):
        quad = ck_quadrature(c, 1.0, z, rho, 0.0, ORIGIN)
        rep = chapman_kolmogorov_defect(LangevinTransition(1.0), 1.0, z, rho, 0.0, ORIGIN, quad)
        assert rep.defect <= 1e-8 * rep.direct


def test_ck_argument_checks():
    c = builtin_family("langevin-drift")
    with pytest.raises(DomainError):
        ck_quadrature(c, 1.0, ORIGIN, 1.0, 0.0, ORIGIN)
    quad = ck_quadrature(c, 1.0, ORIGIN, 0.5, 0.0, ORIGIN)
    with pytest.raises(DomainError):
        chapman_kolmogorov_defect(LangevinTransition(1.0), 1.0, ORIGIN, 0.0, 0.0, ORIGIN, quad)


def test_ck_series_improves_on_frozen():
    c = builtin_family("sin-perturbed-a", {"amp": 0.1})
    z, zeta = PhasePoint(0.2, 0.3), PhasePoint(0.0, 0.1)
    quad = ck_quadrature(c, 0.5, z, 0.25, 0.0, zeta, order=8)
    d0 = chapman_kolmogorov_defect(ParametrixKernel(c, order=0), 0.5, z, 0.25, 0.0, zeta, quad).defect
    d1 = chapman_kolmogorov_defect(ParametrixKernel(c, order=1), 0.5, z, 0.25, 0.0, zeta, quad).defect
    assert d1 < d0


# ---------------------------------------------------------------- sandwich


def test_sandwich_grid():
    g = SandwichGrid(0.0, ORIGIN, (0.5, 1.0), n_x=3, n_v=3)
    assert g.size == 18
    r = g.refined()
    assert r.times == (0.5, 0.75, 1.0) and r.n_x == 5
    u1, _ = r.offsets()
    assert set(np.round(g.offsets()[0].ravel(), 12)) <= set(np.round(u1.ravel(), 12))
    with pytest.raises(DomainError):
        SandwichGrid(1.0, ORIGIN, (0.5,))


def test_sandwich_closed_form_is_tight():
    c = builtin_family("langevin-drift", {"a": 1.0})
    rep = sandwich_estimate(LangevinTransition(1.0), c, SandwichGrid(0.0, ORIGIN, (0.25, 0.5, 1.0)))
    assert rep.mu == pytest.approx(1.0, abs=1e-10)
    assert not rep.saturated


def test_sandwich_scaled_diffusion():
    c = builtin_family("langevin-drift", {"a": 2.0})
    rep = sandwich_estimate(LangevinTransition(2.0), c, SandwichGrid(0.0, ORIGIN, (0.5, 1.0)))
    assert rep.mu == pytest.approx(2.0, rel=1e-9)


def test_sandwich_monotone_under_refinement():
    c = builtin_family("sin-perturbed-a", {"amp": 0.1})
    k = ParametrixKernel(c, order=0)
    g = SandwichGrid(0.0, PhasePoint(0.1, -0.1), (0.25, 0.5), n_x=5, n_v=5)
    coarse = sandwich_estimate(k, c, g)
    fine = sandwich_estimate(k, c, g.refined())
    # nested grids: the fine constant is a max over a superset
    assert fine.mu >= coarse.mu
    assert 1.0 < coarse.mu < 1.5


def test_sandwich_saturates_for_wrong_scale():
    c = builtin_family("langevin-drift", {"a": 1.0})
    rep = sandwich_estimate(LangevinTransition(1.0), c, SandwichGrid(0.0, ORIGIN, (1.0,)), mu_max=1.5)
    assert not rep.saturated
    rep = sandwich_estimate(LangevinTransition(4.0), c, SandwichGrid(0.0, ORIGIN, (1.0,)), mu_max=1.5)
    assert rep.saturated
    assert not rep.checks()[0].passed


# ---------------------------------------------------------------- control


def test_control_free_unit():
    c = builtin_family("langevin-drift")
    r = minimal_energy_control(c, 0.0, ORIGIN, 1.0, PhasePoint(1.0, 0.0))
    assert r.energy == pytest.approx(CONTROL_ENERGY, rel=1e-10)
    assert r.linear_energy == pytest.approx(CONTROL_ENERGY, rel=1e-10)
    assert r.endpoint_gap < 1e-10
    # u(rho) = 6 - 12 rho for this target
    assert np.allclose(r.control, 6 - 12 * r.times, atol=1e-8)
    assert all(ch.passed for ch in r.checks())


def test_control_zero_target():
    c = builtin_family("langevin-drift")
    r = minimal_energy_control(c, 0.0, PhasePoint(0.0, 1.0), 1.0, PhasePoint(1.0, 1.0))
    assert r.energy == pytest.approx(0.0, abs=1e-20)
    assert np.all(np.abs(r.control) < 1e-12)


@given(st.floats(0.2, 3.0))
@settings(max_examples=10, deadline=None)
def test_control_energy_scaling(lam):
    # (s, zeta) -> (t, z) with time dilated by lam^2: energy scales as lam^-2
    c = builtin_family("langevin-drift")
    base = minimal_energy_control(c, 0.0, ORIGIN, 1.0, PhasePoint(1.0, 0.5))
    scaled = minimal_energy_control(c, 0.0, ORIGIN, lam**2, PhasePoint(lam**3 * 1.0, lam * 0.5))
    assert scaled.energy == pytest.approx(base.energy, rel=1e-8)
    assert scaled.energy_ratio == pytest.approx(base.energy_ratio, rel=1e-8)


def test_control_linear_energy_is_gramian_form(rng):
    c = builtin_family("langevin-drift")
    for _ in range(5):
        z = PhasePoint(*rng.normal(size=2))
        t = rng.uniform(0.3, 2)
        r = minimal_energy_control(c, 0.0, ORIGIN, t, z)
        d = np.array([z.x, z.v])
        ref = float(d @ np.linalg.solve(kolmogorov_matrix(t).as_array(), d))
        assert r.linear_energy == pytest.approx(ref, rel=1e-8)
        assert r.energy == pytest.approx(ref, rel=1e-8)


def test_control_nonlinear_drift():
    c = builtin_family("perturbed-drift", {"eps": 0.1})
    r = minimal_energy_control(c, 0.0, PhasePoint(0.1, 0.2), 1.0, PhasePoint(0.8, -0.3))
    assert r.endpoint_gap < 1e-10
    assert 1 <= r.iterations <= 10
    assert r.energy_ratio > 0 and r.sup_ratio >= r.energy_ratio


def test_control_stall_raises():
    c = builtin_family("perturbed-drift", {"eps": 0.1})
    with pytest.raises(ControlError):
        minimal_energy_control(c, 0.0, ORIGIN, 1.0, PhasePoint(3.0, 2.0), max_iter=0)
    with pytest.raises(DomainError):
        minimal_energy_control(c, 1.0, ORIGIN, 1.0, ORIGIN)


# ---------------------------------------------------------------- Monte Carlo


def test_mc_deterministic_and_passing():
    w = BrownianPath.sample(11, 1.0, 1e-2)
    p = LangevinParams(1.0, 0.5)
    a = mc_conditional_check(p, w, PhasePoint(0.1, 0.2), 1.0, 20_000, seed=3)
    b = mc_conditional_check(p, w, PhasePoint(0.1, 0.2), 1.0, 20_000, seed=3)
    assert a == b or (a.mean == b.mean and a.cov == b.cov and a.test_values == b.test_values)
    assert a.passed


def test_mc_chunking_is_part_of_the_seed_contract():
    w = BrownianPath.sample(11, 1.0, 1e-2)
    p = LangevinParams(1.0, 0.5)
    a = mc_conditional_check(p, w, ORIGIN, 1.0, 20_000, seed=3, chunk=1 << 14)
    b = mc_conditional_check(p, w, ORIGIN, 1.0, 20_000, seed=4, chunk=1 << 14)
    assert a.mean != b.mean


def test_mc_detects_wrong_law():
    w = BrownianPath.sample(11, 1.0, 1e-2)
    rep = mc_conditional_check(LangevinParams(1.0, 0.5), w, ORIGIN, 1.0, 20_000)
    # compare against the law of a different observation path
    other = mc_conditional_check(LangevinParams(1.0, 0.5), BrownianPath.sample(12, 1.0, 1e-2), ORIGIN, 1.0, 20_000)
    z = abs(rep.mean[1] - other.mean_ref[1]) / rep.stderr[1]
    assert z > 4


def test_mc_argument_checks():
    w = BrownianPath.sample(0, 1.0, 1e-2)
    with pytest.raises(DomainError):
        mc_conditional_check(LangevinParams(1.0, 0.5), w, ORIGIN, 1.0, 100)
    with pytest.raises(DomainError):
        mc_conditional_check(LangevinParams(1.0, 1.0), w, ORIGIN, 1.0, 10_000)


# ---------------------------------------------------------------- flow bounds


def test_flow_bounds_constant_sigma():
    c = builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.0})
    rep = flow_bound_check(c, 3, np.linspace(-2, 2, 5), np.linspace(-2, 2, 5), t_end=0.2)
    assert rep.m_dv == 0.0 and rep.m_dx == 0.0 and rep.m_second == 0.0
    assert rep.dv_min == rep.dv_max == 1.0


def test_flow_bounds_flattening():
    c = builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.2})
    g = np.linspace(-5, 5, 11)
    rep = flow_bound_check(c, 10, g, g, t_end=0.5)
    assert all(ch.passed for ch in rep.checks())
    assert rep.dv_min > 0
    assert rep.per_path_m.shape == (10,)
    assert rep.m == max(rep.m_value, rep.m_dv, rep.m_dx, rep.m_second)
    again = flow_bound_check(c, 10, g, g, t_end=0.5)
    assert again.m == rep.m
    with pytest.raises(DomainError):
        flow_bound_check(c, 1, g, g, eps=0.7)


@given(st.floats(0.1, 5.0))
@settings(max_examples=10, deadline=None)
def test_control_energy_quadratic_in_target_offset(lam):
    c = builtin_family("langevin-drift")
    zeta = PhasePoint(0.2, 0.3)
    free = PhasePoint(0.2 + 0.3, 0.3)
    base = minimal_energy_control(c, 0.0, zeta, 1.0, PhasePoint(free.x + 0.4, free.v - 0.7))
    far = minimal_energy_control(c, 0.0, zeta, 1.0, PhasePoint(free.x + 0.4 * lam, free.v - 0.7 * lam))
    assert far.energy == pytest.approx(lam**2 * base.energy, rel=1e-8)
