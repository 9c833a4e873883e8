"""Polytopes, C-set checks and the gauge map.

Closed forms are checked against independent oracles: a bisection on the
scaling factor for the gauge, central finite differences for the
Jacobian and the pullbacks.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_ball_point, random_cset
from safecbf.geometry import (
    GeometryError,
    NotCset,
    NotMember,
    OutOfBall,
    Polytope,
    check_cset,
    gauge_function,
    gauge_map,
    gauge_map_inverse,
    gauge_map_jacobian,
    gauge_map_jvp,
    gauge_map_vjp,
)


def bisect_gauge(P, v, hi=1e6, iters=200):
    """Smallest lambda with v in lambda P, using membership queries only."""
    if P.contains(np.zeros_like(v)) and not np.any(v):
        return 0.0
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid > 0 and P.contains(v / mid, tol=0.0):
            hi = mid
        else:
            lo = mid
    return hi


# polytope container --------------------------------------------------------
def test_box_rows_and_dim():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    assert P.dim == 2 and P.nrows == 4
    assert P.contains([2.0, -1.0])
    assert not P.contains([2.1, 0.0])


def test_zero_row_rejected():
    with pytest.raises(GeometryError):
        Polytope(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones(2))


def test_shape_mismatch_rejected():
    with pytest.raises(GeometryError):
        Polytope(np.eye(2), np.ones(3))


def test_json_round_trip(rng):
    P = random_cset(rng, 3)
    Q = Polytope.from_json(P.to_json())
    np.testing.assert_array_equal(P.F, Q.F)
    np.testing.assert_array_equal(P.g, Q.g)


def test_shift_moves_membership(rng):
    P = random_cset(rng, 2)
    c = np.array([0.05, -0.05])
    w = np.array([0.01, 0.02])
    assert P.shift(c).contains(w) == P.contains(w + c)


def test_bounding_box_of_box():
    lo, hi = Polytope.box([-3.0, 0.5], [1.0, 2.0]).bounding_box()
    np.testing.assert_allclose(lo, [-3.0, 0.5])
    np.testing.assert_allclose(hi, [1.0, 2.0])


def test_arrays_are_read_only():
    P = Polytope.unit_ball(2)
    with pytest.raises(ValueError):
        P.F[0, 0] = 5.0


# C-set certificate ---------------------------------------------------------
def test_unit_ball_is_cset():
    cert = check_cset(Polytope.unit_ball(3))
    assert cert.is_cset and cert.bounded
    assert cert.origin_margin == pytest.approx(1.0)


def test_halfspace_is_unbounded():
    cert = check_cset(Polytope(np.array([[1.0, 0.0]]), np.array([1.0])))
    assert not cert.bounded
    assert not cert.is_cset


def test_origin_on_boundary_is_not_cset():
    F = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    cert = check_cset(Polytope(F, np.array([0.0, 1.0, 1.0, 1.0])))
    assert cert.origin_margin == 0.0
    assert not cert.is_cset


def test_random_csets_certified(rng):
    for _ in range(20):
        assert check_cset(random_cset(rng, int(rng.integers(1, 5)))).is_cset


# gauge function ------------------------------------------------------------
def test_gauge_of_unit_ball_is_inf_norm():
    assert gauge_function(Polytope.unit_ball(2), [0.5, -0.25]) == pytest.approx(0.5)


def test_gauge_at_zero():
    assert gauge_function(Polytope.box([-2.0, -1.0], [2.0, 1.0]), [0.0, 0.0]) == 0.0


def test_gauge_box_example_matches_bisection():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    assert gauge_function(P, [1.0, 1.0]) == pytest.approx(1.0)
    assert bisect_gauge(P, np.array([1.0, 1.0])) == pytest.approx(1.0, abs=1e-9)


def test_gauge_rejects_origin_outside():
    P = Polytope(np.array([[1.0], [-1.0]]), np.array([-0.1, 1.0]))
    with pytest.raises(NotCset):
        gauge_function(P, [0.1])


def test_gauge_matches_bisection_random(rng):
    for _ in range(50):
        m = int(rng.integers(1, 5))
        P = random_cset(rng, m)
        v = rng.normal(size=m)
        assert gauge_function(P, v) == pytest.approx(bisect_gauge(P, v), rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 10.0))
def test_gauge_positively_homogeneous(seed, t):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    P = random_cset(rng, m)
    v = rng.normal(size=m)
    assert gauge_function(P, t * v) == pytest.approx(t * gauge_function(P, v), rel=1e-12, abs=1e-12)


# gauge map -----------------------------------------------------------------
def test_gauge_map_identity_on_unit_ball(rng):
    P = Polytope.unit_ball(3)
    for _ in range(10):
        v = random_ball_point(rng, 3)
        np.testing.assert_allclose(gauge_map(P, v), v, atol=1e-15)


def test_gauge_map_zero():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    np.testing.assert_array_equal(gauge_map(P, [0.0, 0.0]), [0.0, 0.0])


def test_gauge_map_box_corner_on_boundary():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    w = gauge_map(P, [1.0, 1.0])
    np.testing.assert_allclose(w, [1.0, 1.0])
    # second row w2 <= 1 is tight
    assert P.F[1] @ w == pytest.approx(P.g[1])
    assert P.residual(w) == pytest.approx(0.0, abs=1e-15)


def test_gauge_map_out_of_ball():
    with pytest.raises(OutOfBall):
        gauge_map(Polytope.unit_ball(2), [1.5, 0.0])


def test_inverse_rejects_non_member():
    with pytest.raises(NotMember):
        gauge_map_inverse(Polytope.unit_ball(2), [1.5, 0.0])


def test_inverse_zero_and_identity(rng):
    P = Polytope.unit_ball(2)
    np.testing.assert_array_equal(gauge_map_inverse(P, [0.0, 0.0]), [0.0, 0.0])
    w = random_ball_point(rng, 2)
    np.testing.assert_allclose(gauge_map_inverse(P, w), w, atol=1e-15)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gauge_map_membership_level_and_round_trip(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    P = random_cset(rng, m)
    v = random_ball_point(rng, m)
    w = gauge_map(P, v)
    assert P.residual(w) < 1e-9
    # level sets are matched: gauge of the image equals the inf-norm of v
    assert abs(gauge_function(P, w) - np.max(np.abs(v))) < 1e-9
    np.testing.assert_allclose(gauge_map_inverse(P, w), v, atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_boundary_maps_to_boundary(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    P = random_cset(rng, m)
    v = random_ball_point(rng, m)
    v[rng.integers(m)] = rng.choice([-1.0, 1.0])
    v = np.clip(v, -1.0, 1.0)
    assert abs(P.residual(gauge_map(P, v))) < 1e-9


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_inverse_then_forward(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    P = random_cset(rng, m)
    # a random member: shrink a random direction onto the boundary
    d = rng.normal(size=m)
    w = rng.uniform(0.0, 1.0) * d / gauge_function(P, d)
    np.testing.assert_allclose(gauge_map(P, gauge_map_inverse(P, w)), w, atol=1e-9)


# derivatives ---------------------------------------------------------------
def fd_jacobian(fn, v, eps=1e-6):
    cols = []
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = eps
        cols.append((fn(v + e) - fn(v - e)) / (2 * eps))
    return np.stack(cols, axis=1)


def test_jvp_identity_on_unit_ball(rng):
    P = Polytope.unit_ball(3)
    v = random_ball_point(rng, 3)
    dv = rng.normal(size=3)
    np.testing.assert_allclose(gauge_map_jvp(P, v, dv), dv, atol=1e-14)


def test_jacobian_at_zero_uses_first_axis_piece():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    J = gauge_map_jacobian(P, np.zeros(2))
    # along +e0 the map is w = 2 v locally in the first coordinate
    np.testing.assert_allclose(J @ np.array([1.0, 0.0]), [2.0, 0.0])
    assert np.all(np.isfinite(J))


def is_kink(P, v, margin=1e-4):
    a = np.sort(np.abs(v))
    r = np.sort(P.F @ v / P.g)
    gap_norm = a[-1] - a[-2] if v.size > 1 else np.inf
    gap_row = r[-1] - r[-2]
    return gap_norm < margin or gap_row < margin * max(1.0, abs(r[-1])) or np.max(np.abs(v)) < margin


def test_jacobian_matches_finite_differences(rng):
    checked = 0
    while checked < 100:
        m = int(rng.integers(1, 5))
        P = random_cset(rng, m)
        v = 0.9 * random_ball_point(rng, m)
        if is_kink(P, v):
            continue
        J = gauge_map_jacobian(P, v)
        Jfd = fd_jacobian(lambda z: gauge_map(P, z), v)
        assert np.linalg.norm(J - Jfd) <= 1e-5 * max(1.0, np.linalg.norm(Jfd))
        checked += 1


def test_vjp_matches_jacobian_transpose(rng):
    for _ in range(50):
        m = int(rng.integers(1, 5))
        P = random_cset(rng, m)
        v = random_ball_point(rng, m)
        cot = rng.normal(size=m)
        v_bar, _, _ = gauge_map_vjp(P.F, P.g, v, cot)
        np.testing.assert_allclose(v_bar, gauge_map_jacobian(P, v).T @ cot, atol=1e-12)


def test_vjp_data_partials_match_finite_differences(rng):
    eps = 1e-6
    checked = 0
    while checked < 30:
        m = int(rng.integers(1, 4))
        P = random_cset(rng, m)
        v = 0.9 * random_ball_point(rng, m)
        if is_kink(P, v):
            continue
        cot = rng.normal(size=m)
        _, F_bar, g_bar = gauge_map_vjp(P.F, P.g, v, cot)

        def out(F, g):
            return cot @ gauge_map(Polytope(F, g), v, validate=False)

        F = P.F.copy()
        g = P.g.copy()
        for i in range(len(g)):
            dg = np.zeros_like(g)
            dg[i] = eps
            fd = (out(F, g + dg) - out(F, g - dg)) / (2 * eps)
            assert g_bar[i] == pytest.approx(fd, abs=1e-6)
            for k in range(m):
                dF = np.zeros_like(F)
                dF[i, k] = eps
                fd = (out(F + dF, g) - out(F - dF, g)) / (2 * eps)
                assert F_bar[i, k] == pytest.approx(fd, abs=1e-6)
        checked += 1


def test_vjp_at_zero_has_no_data_sensitivity():
    P = Polytope.box([-2.0, -1.0], [2.0, 1.0])
    _, F_bar, g_bar = gauge_map_vjp(P.F, P.g, np.zeros(2), np.ones(2))
    assert not F_bar.any() and not g_bar.any()
