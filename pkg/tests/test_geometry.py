import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from langevin_kernels.errors import DomainError
from langevin_kernels.geometry import (
    IDENTITY,
    PhasePoint,
    SpaceTimePoint,
    SpatialDilation,
    dilate,
    free_flow,
    group_inv,
    group_mul,
    homogeneous_norm,
    intrinsic_distance,
)

coord = st.floats(-10, 10, allow_nan=False)
points = st.builds(SpaceTimePoint.of, coord, coord, coord)
scales = st.floats(0.05, 20)


def close(p, q, tol=1e-9):
    return all(math.isclose(a, b, rel_tol=tol, abs_tol=tol) for a, b in zip(p.as_tuple(), q.as_tuple()))


def test_group_law_example():
    p = SpaceTimePoint.of(1, 2, 3)
    q = SpaceTimePoint.of(0.5, -1, 2)
    assert group_mul(p, q).as_tuple() == (1.5, 2 + -1 + 0.5 * 3, 5)


def test_identity_and_inverse_example():
    p = SpaceTimePoint.of(0.3, -0.2, 1.1)
    assert group_mul(IDENTITY, p) == p
    assert close(group_mul(group_inv(p), p), IDENTITY)


@given(points, points, points)
def test_associative(p, q, r):
    assert close(group_mul(group_mul(p, q), r), group_mul(p, group_mul(q, r)), 1e-8)


@given(points)
def test_inverse_both_sides(p):
    assert close(group_mul(p, group_inv(p)), IDENTITY)
    assert close(group_mul(group_inv(p), p), IDENTITY)


@given(points, scales)
def test_norm_homogeneous(p, lam):
    assert math.isclose(homogeneous_norm(dilate(lam, p)), lam * homogeneous_norm(p), rel_tol=1e-9, abs_tol=1e-12)


@given(points, points, scales)
def test_distance_scales(p, q, lam):
    d = homogeneous_norm(dilate(lam, group_mul(group_inv(q), p)))
    assert math.isclose(d, lam * intrinsic_distance(p, q), rel_tol=1e-9, abs_tol=1e-12)


@given(points, points, scales)
def test_dilation_is_automorphism(p, q, lam):
    assert close(dilate(lam, group_mul(p, q)), group_mul(dilate(lam, p), dilate(lam, q)), 1e-7)


def test_norm_negative_x_uses_abs():
    assert homogeneous_norm(SpaceTimePoint.of(0, -8, 0)) == pytest.approx(2.0)


def test_spatial_dilation():
    assert SpatialDilation(2.0).apply(PhasePoint(1, 1)) == PhasePoint(8, 2)
    with pytest.raises(DomainError):
        SpatialDilation(0.0)


def test_free_flow():
    assert free_flow(2.0, PhasePoint(1.0, 0.5)) == PhasePoint(2.0, 0.5)


def test_rejects_non_finite():
    with pytest.raises(DomainError):
        PhasePoint(math.nan, 0.0)
    with pytest.raises(DomainError):
        dilate(-1.0, IDENTITY)
