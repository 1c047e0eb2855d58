import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plenoptic.geometry import (ONE, Direction, FixedCoord, FixedPointError, StokesVector, dolp, dolp_array,
                                frame_angle, malus_intensity, push_halve, reference_x, shr_exact,
                                stokes_from_analyzer_intensities, stokes_images_from_analyzer, stokes_rotation,
                                to_fixed)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_direction_is_unit_and_rejects_zero():
    d = Direction(3.0, 0.0, 4.0)
    assert np.linalg.norm(d.as_array()) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Direction(0.0, 0.0, 0.0)


def test_dolp_of_zero_and_fully_polarized():
    assert dolp(StokesVector(0.0, 0.0, 0.0)) == 0.0
    assert dolp(StokesVector(2.0, 0.0, 2.0)) == pytest.approx(1.0)


@given(st.floats(0, 10), st.floats(0, 1), st.floats(0, math.pi))
def test_analyzer_round_trip(s0, p, angle):
    s = np.array([s0, s0 * p * math.cos(2 * angle), s0 * p * math.sin(2 * angle)])
    i = [float(malus_intensity(s, a)) for a in (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)]
    back = stokes_from_analyzer_intensities(*[max(v, 0.0) for v in i])
    assert np.allclose(back.as_array()[:3], s, atol=1e-9 * max(s0, 1))


def test_analyzer_images_reject_negative():
    with pytest.raises(ValueError):
        stokes_images_from_analyzer(-np.ones((4, 2, 2)))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_stokes_rotation_composes_and_keeps_dolp(a, b):
    m = stokes_rotation(a) @ stokes_rotation(b)
    assert np.allclose(m, stokes_rotation(a + b), atol=1e-9)
    s = np.array([1.0, 0.3, -0.4])
    assert dolp_array(stokes_rotation(a) @ s) == pytest.approx(dolp(s))


@given(st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_reference_axis_is_perpendicular_unit(v):
    k = np.asarray(v) / np.linalg.norm(v)
    x = reference_x(k)
    assert abs(x @ k) < 1e-9
    assert np.linalg.norm(x) == pytest.approx(1.0)


def test_frame_angle_quarter_turn():
    k = np.array([0.0, 0.0, 1.0])
    assert frame_angle(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), k) == pytest.approx(math.pi / 2)


@given(st.integers(-(1 << 40), 1 << 40))
def test_shr_exact_refuses_rounding(v):
    if v % 2:
        with pytest.raises(FixedPointError):
            shr_exact(v)
    else:
        assert shr_exact(v) * 2 == v


@given(st.integers(-(1 << 30), 1 << 30), st.integers(-(1 << 30), 1 << 30))
def test_push_halve_matches_rational(span, offset):
    span *= 2
    assert Fraction(push_halve(span, offset)) == Fraction(span, 2) + offset
    out = push_halve(FixedCoord(span), FixedCoord(offset))
    assert out.to_fraction() == (Fraction(span, 2) + offset) / ONE


def test_to_fixed_rejects_non_dyadic():
    assert to_fixed(0.5) == ONE // 2
    with pytest.raises(FixedPointError):
        to_fixed(Fraction(1, 3))


def test_fixed_range_checked():
    with pytest.raises(FixedPointError):
        FixedCoord(1 << 64)
