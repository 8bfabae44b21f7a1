"""Unit tests for the barrier and complementarity primitives."""

import math

import pytest
from hypothesis import given, strategies as st

from ipoc.barrier import psi_eval, fb_value, fb_eval
from ipoc.errors import FBOriginError


def test_psi_reference_point():
    ev = psi_eval(-1.0)
    assert ev.value == 0.0
    assert ev.first == 1.0
    assert ev.second == 1.0
    assert ev.finite


def test_psi_infeasible_sentinel():
    for x in (0.0, 1e-300, 0.5, 7.0):
        ev = psi_eval(x)
        assert ev.value == math.inf
        assert ev.first is None and ev.second is None
        assert not ev.finite


@pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
def test_psi_rejects_nonfinite(x):
    with pytest.raises(ValueError):
        psi_eval(x)


@given(st.floats(min_value=1e-12, max_value=1e12))
def test_psi_derivatives_consistent(s):
    ev = psi_eval(-s)
    assert ev.value == pytest.approx(-math.log(s))
    assert ev.first == pytest.approx(1.0 / s)
    assert ev.second == pytest.approx(1.0 / s**2)


@given(st.floats(min_value=1e-6, max_value=1e6),
       st.floats(min_value=1e-10, max_value=1.0))
def test_fb_root_set(x, eps):
    # points with x > 0, y = -eps/x satisfy the perturbed complementarity
    # conditions exactly, so they must be roots
    y = -eps / x
    assert fb_value(x, y, eps) == pytest.approx(0.0, abs=1e-9 * (x - y))


def test_fb_sign_behavior():
    eps = 1e-4
    # clearly non-complementary points are far from the root set
    assert abs(fb_value(1.0, -1.0, eps)) > 0.5
    assert fb_value(-1.0, 0.5, eps) < -2.0


def test_fb_rejects_negative_eps():
    with pytest.raises(ValueError):
        fb_value(1.0, -1.0, -1e-9)
    with pytest.raises(ValueError):
        fb_eval(1.0, -1.0, -1e-9)


def test_fb_origin_singularity():
    with pytest.raises(FBOriginError):
        fb_eval(0.0, 0.0, 0.0)


@given(st.floats(min_value=-10, max_value=10),
       st.floats(min_value=-10, max_value=10),
       st.floats(min_value=1e-8, max_value=1.0))
def test_fb_partials_match_finite_differences(x, y, eps):
    val, dx, dy = fb_eval(x, y, eps)
    assert val == fb_value(x, y, eps)
    h = 1e-6 * (1.0 + abs(x) + abs(y))
    fd_x = (fb_value(x + h, y, eps) - fb_value(x - h, y, eps)) / (2 * h)
    fd_y = (fb_value(x, y + h, eps) - fb_value(x, y - h, eps)) / (2 * h)
    assert dx == pytest.approx(fd_x, abs=1e-4)
    assert dy == pytest.approx(fd_y, abs=1e-4)
