import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_kernels import (
    ConfigError,
    GridSpec,
    KolmogorovCoefficients,
    SpaceTimePoint,
    SpdeCoefficients,
    builtin_family,
    hormander_check,
    validate_assumptions,
)
from langevin_kernels.coefficients import FAMILIES, flattening_first_order_bound

SMALL = GridSpec(x_range=(-5, 5), v_range=(-5, 5), n_space=41, n_time=2)


def test_families_registered():
    assert set(FAMILIES) == {"constant", "sin-perturbed-a", "flattening-sigma", "langevin-drift", "perturbed-drift"}
    with pytest.raises(ConfigError):
        builtin_family("nope")


def test_constant_family():
    c = builtin_family("constant", {"a": 2.0, "sigma": 0.5})
    assert isinstance(c, SpdeCoefficients)
    assert c.spatially_constant_sigma
    assert float(c.a(0, 1, 2)) == 2.0 and float(c.sigma(0, 1, 2)) == 0.5
    with pytest.raises(ConfigError):
        builtin_family("constant", {"a": -1.0})


def test_sin_perturbed_values():
    c = builtin_family("sin-perturbed-a", {"base": 1.0, "amp": 0.1, "freq": 2.0})
    assert isinstance(c, KolmogorovCoefficients)
    assert float(c.a(0.0, 0.3, 5.0)) == pytest.approx(1 + 0.1 * math.sin(0.6), rel=1e-15)
    assert c.a(0.0, np.zeros((3, 2)), 0.0).shape == (3, 2)
    s = builtin_family("sin-perturbed-a", {"kind": "spde", "sigma": 0.3})
    assert isinstance(s, SpdeCoefficients)
    with pytest.raises(ConfigError):
        builtin_family("sin-perturbed-a", {"kind": "other"})


def test_flattening_values():
    c = builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.2})
    assert float(c.sigma(0, 0, 0)) == pytest.approx(0.5)
    assert float(c.sigma(0, 1, 1)) == pytest.approx(0.3 + 0.2 / 3)
    assert not c.spatially_constant_sigma
    assert builtin_family("flattening-sigma", {"sigma1": 0.0}).spatially_constant_sigma
    with pytest.raises(ConfigError):
        builtin_family("flattening-sigma", {"eps": 0.6})


def test_flattening_partials_match_finite_differences(rng):
    c = builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.2})
    h = 1e-4
    sig = lambda x, v: float(c.sigma(0.0, x, v))

    def fd(f, x, v):
        return ((f(x + h, v) - f(x - h, v)) / (2 * h), (f(x, v + h) - f(x, v - h)) / (2 * h))

    for _ in range(50):
        x, v = rng.uniform(-3, 3, 2)
        d = c.sigma_partials(0.0, x, v)
        gx, gv = fd(sig, x, v)
        assert float(d["x"]) == pytest.approx(gx, abs=1e-8)
        assert float(d["v"]) == pytest.approx(gv, abs=1e-8)
        for first, second in (("x", ("xx", "xv")), ("v", ("xv", "vv")), ("xx", ("xxx", "xxv")), ("vv", ("xvv", "vvv"))):
            f = lambda xx, vv, k=first: float(c.sigma_partials(0.0, xx, vv)[k])
            dx, dv = fd(f, x, v)
            assert float(d[second[0]]) == pytest.approx(dx, abs=1e-7)
            assert float(d[second[1]]) == pytest.approx(dv, abs=1e-7)


def test_flattening_bound_is_attained():
    s1, eps = 0.2, 0.25
    r = np.linspace(0, 20, 200001)
    weighted = 2 * s1 * r / (1 + r * r) ** 2 * (1 + r * r) ** eps
    assert flattening_first_order_bound(s1, eps) == pytest.approx(weighted.max(), rel=1e-8)


def test_perturbed_drift_flow_map():
    c = builtin_family("perturbed-drift", {"eps": 0.1})
    x, v, K = c.flow_map(0.0, 0.2, 0.7, 1.5)
    assert v == pytest.approx(0.7)
    assert x == pytest.approx(0.2 + 1.5 * (0.7 + 0.1 * math.sin(0.7)))
    assert K == pytest.approx(1.5 * (1 + 0.1 * math.cos(0.7)))


def test_validate_sin_perturbed():
    rep = validate_assumptions(builtin_family("sin-perturbed-a", {"amp": 0.1}), SMALL)
    assert rep.ok
    assert 1.1 <= rep.lambda1 <= 1.12
    assert rep.lambda2 == pytest.approx(1.0)


def test_validate_perturbed_drift():
    rep = validate_assumptions(builtin_family("perturbed-drift", {"eps": 0.1}), SMALL)
    assert rep.ok
    assert rep.lambda2 == pytest.approx(1 / 0.9, rel=1e-2)


def test_validate_flattening():
    rep = validate_assumptions(builtin_family("flattening-sigma", {"sigma0": 0.3, "sigma1": 0.2}), SMALL)
    assert rep.ok
    assert rep.coercivity_min == pytest.approx(1 - 0.25, rel=1e-12)
    assert rep.flattening_first <= flattening_first_order_bound(0.2, 0.25) * (1 + 1e-9)


def test_validate_detects_coercivity_failure():
    rep = validate_assumptions(builtin_family("constant", {"a": 1.0, "sigma": 1.0}), SMALL)
    assert not rep.passed["coercivity"]
    assert not rep.ok


def test_validate_detects_degenerate_diffusion():
    c = builtin_family("sin-perturbed-a", {"base": 1.0, "amp": 1.5})
    rep = validate_assumptions(c, SMALL)
    assert not rep.passed["ellipticity"]


def test_hormander_constant():
    c = builtin_family("langevin-drift", {"a": 4.0})
    rep = hormander_check(c, SpaceTimePoint.of(0.0, 0.3, -0.2))
    assert rep.passed
    assert rep.det == pytest.approx(-4.0, rel=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
@settings(max_examples=30, deadline=None)
def test_hormander_perturbed_families(x, v, t):
    for c in (builtin_family("sin-perturbed-a", {"amp": 0.1}), builtin_family("perturbed-drift", {"eps": 0.1})):
        assert hormander_check(c, (t, x, v)).passed


def test_hormander_fails_without_transport():
    base = builtin_family("langevin-drift")

    def jac(t, x, v):
        z = np.zeros(np.broadcast(t, x, v).shape)
        return z, z, z, z

    def drift(t, x, v):
        z = np.zeros(np.broadcast(t, x, v).shape)
        return z, z

    c = KolmogorovCoefficients(a=base.a, b=base.b, drift=drift, jacobian=jac)
    assert not hormander_check(c, (0.0, 0.0, 0.0)).passed
