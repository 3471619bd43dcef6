import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hrrp_lab.geometry import (
    TWO_PI,
    GeometryError,
    PlanarPoint,
    aspect_angle,
    los_azimuth,
    lrp,
    wrap_angle,
    wrapped_error,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
angle = st.floats(min_value=0.0, max_value=TWO_PI, exclude_max=True)


@pytest.mark.parametrize(
    "r, expected",
    [(-math.pi / 2, 3 * math.pi / 2), (TWO_PI, 0.0), (7.0, 7.0 - TWO_PI), (0.0, 0.0)],
)
def test_wrap_examples(r, expected):
    assert wrap_angle(r) == pytest.approx(expected, abs=1e-15)


def test_wrap_7_value():
    assert wrap_angle(7.0) == pytest.approx(0.716815, abs=1e-6)


def test_wrap_rejects_non_finite():
    with pytest.raises(GeometryError):
        wrap_angle(float("nan"))
    with pytest.raises(GeometryError):
        wrap_angle(np.array([0.0, np.inf]))


@given(finite)
def test_wrap_range_and_congruence(r):
    w = wrap_angle(r)
    assert 0.0 <= w < TWO_PI
    k = round((r - w) / TWO_PI)
    assert abs(r - w - k * TWO_PI) <= 1e-9 * max(1.0, abs(r))


@given(finite)
def test_wrap_idempotent(r):
    w = wrap_angle(r)
    assert wrap_angle(w) == w


def test_wrap_tiny_negative_stays_in_range():
    assert 0.0 <= wrap_angle(-1e-300) < TWO_PI


@pytest.mark.parametrize(
    "a, b, expected",
    [(0.0, TWO_PI - 0.1, 0.1), (math.pi / 2, math.pi / 2, 0.0), (0.2, 6.0, TWO_PI - 5.8)],
)
def test_wrapped_error_examples(a, b, expected):
    assert wrapped_error(a, b) == pytest.approx(expected, abs=1e-12)


def test_wrapped_error_example_value():
    assert wrapped_error(0.2, 6.0) == pytest.approx(0.483185, abs=1e-6)


@given(angle, angle)
def test_wrapped_error_symmetric_and_bounded(a, b):
    e = wrapped_error(a, b)
    assert e == wrapped_error(b, a)
    assert 0.0 <= e <= math.pi


@pytest.mark.parametrize(
    "target, expected",
    [((1, 0), 0.0), ((0, 5), math.pi / 2), ((-1, -1), 5 * math.pi / 4)],
)
def test_los_azimuth(target, expected):
    assert los_azimuth(PlanarPoint(*target), PlanarPoint(0, 0)) == pytest.approx(expected, abs=1e-15)


def test_los_azimuth_coincident():
    with pytest.raises(GeometryError):
        los_azimuth(PlanarPoint(3, 4), PlanarPoint(3, 4))


@pytest.mark.parametrize(
    "hdg, theta, expected",
    [(0.0, 0.0, 0.0), (math.pi / 4, math.pi / 2, 7 * math.pi / 4), (3 * math.pi / 2, math.pi / 2, math.pi)],
)
def test_aspect_angle(hdg, theta, expected):
    assert aspect_angle(hdg, theta) == pytest.approx(expected, abs=1e-15)


@given(angle, angle)
def test_aspect_plus_theta_recovers_heading(hdg, theta):
    phi = aspect_angle(hdg, theta)
    assert wrapped_error(wrap_angle(phi + theta), hdg) <= 1e-12


def _lrp_oracle(profile, dr, frac):
    # bracketing by brute force over all index pairs
    p = list(profile)
    thr = frac * max(p)
    above = [i for i in range(len(p)) if p[i] >= thr]
    best = 0
    for i in above:
        for j in above:
            best = max(best, j - i + 1)
    return best * dr


@pytest.mark.parametrize(
    "profile, dr, frac, expected",
    [
        ([0, 0, 5, 4, 0, 0], 1.0, 0.5, 2.0),
        ([1, 1, 1, 1], 0.5, 0.1, 2.0),
        ([0, 3, 0, 0, 3, 0], 1.0, 0.5, 4.0),
    ],
)
def test_lrp_examples(profile, dr, frac, expected):
    assert _lrp_oracle(profile, dr, frac) == expected
    assert lrp(profile, dr, frac) == expected


@given(
    st.lists(st.one_of(st.just(0.0), st.floats(min_value=1e-3, max_value=100)), min_size=1, max_size=40).filter(lambda p: max(p) > 0),
    st.floats(min_value=1.0, max_value=1e6),
)
def test_lrp_scale_invariant_and_matches_oracle(profile, scale):
    base = lrp(profile, 1.0, 0.1)
    assert base == _lrp_oracle(profile, 1.0, 0.1)
    # powers of two scale exactly, so the threshold comparison is unchanged
    s2 = 2.0 ** round(math.log2(scale))
    assert lrp([v * s2 for v in profile], 1.0, 0.1) == base


def test_lrp_all_zero():
    with pytest.raises(GeometryError):
        lrp([0, 0, 0], 1.0)
