from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastic_alloc.errors import DomainError
from elastic_alloc.speed import (
    SpeedCurve,
    is_power_of_two,
    log2_int,
    per_second_progress,
    speed,
    step_progress,
)

POWERS = [2 ** e for e in range(6)]  # 1..32


def test_anchor_values():
    curve = SpeedCurve()
    assert curve.exact(1) == 1
    assert curve.exact(2) == Fraction(8, 5)
    assert curve.exact(16) == Fraction(65536, 10000)
    assert speed(1) == 1.0
    assert speed(2) == 1.6
    assert speed(16) == pytest.approx(6.5536, abs=1e-12)


def test_zero_nodes_make_no_progress():
    assert speed(0) == 0.0
    assert SpeedCurve().speed(0) == 0.0


def test_doubling_multiplies_by_one_point_six():
    for k in POWERS[:-1]:
        assert SpeedCurve(legal_set=POWERS).exact(2 * k) == SpeedCurve(legal_set=POWERS).exact(k) * Fraction(8, 5)


def test_monotone_and_chord_concave():
    curve = SpeedCurve(legal_set=POWERS)
    v = [curve.exact(k) for k in POWERS]
    assert all(b > a for a, b in zip(v, v[1:]))
    slopes = [(v[i + 1] - v[i]) / (POWERS[i + 1] - POWERS[i]) for i in range(len(v) - 1)]
    assert all(b < a for a, b in zip(slopes, slopes[1:]))


def test_outside_legal_set_rejected():
    curve = SpeedCurve()
    with pytest.raises(DomainError):
        curve.speed(32)
    with pytest.raises(DomainError):
        speed(3)


def test_step_and_second_progress():
    assert step_progress(16, 1 / 12) == pytest.approx(6.5536 / 12)
    assert per_second_progress(2) == pytest.approx(1.6 / 3600)
    with pytest.raises(DomainError):
        step_progress(1, 0.0)


def test_power_helpers():
    assert [k for k in range(1, 20) if is_power_of_two(k)] == [1, 2, 4, 8, 16]
    assert not is_power_of_two(0) and not is_power_of_two(2.0)
    assert [log2_int(k) for k in POWERS] == list(range(6))


def test_speeds_vector():
    np.testing.assert_allclose(SpeedCurve().speeds([1, 2, 4]), [1.0, 1.6, 2.56])


@given(st.integers(min_value=0, max_value=9))
def test_float_matches_exact(e):
    k = 2 ** e
    curve = SpeedCurve(legal_set=tuple(2 ** i for i in range(10)))
    assert curve.speed(k) == pytest.approx(float(curve.exact(k)), rel=1e-14)
