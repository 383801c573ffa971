import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mais.core import (
    AllZeroWeights,
    NonFiniteWeight,
    RngStream,
    log_sum_exp,
    make_rng,
    normalize_log_weights,
    normalize_weights,
)


def test_normalize_weights_example():
    np.testing.assert_allclose(normalize_weights([1.0, 3.0]), [0.25, 0.75])


def test_normalize_weights_all_zero():
    with pytest.raises(AllZeroWeights):
        normalize_weights([0.0, 0.0, 0.0])


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf, 1.0]])
def test_normalize_weights_non_finite(bad):
    with pytest.raises(NonFiniteWeight):
        normalize_weights(bad)


def test_normalize_weights_negative():
    with pytest.raises(ValueError):
        normalize_weights([1.0, -0.5])


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 1e6)))
def test_normalized_weights_sum_to_one(w):
    if w.sum() == 0:
        with pytest.raises(AllZeroWeights):
            normalize_weights(w)
        return
    p = normalize_weights(w)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)


def test_log_sum_exp_matches_direct():
    v = np.array([-1.0, 0.5, 2.0])
    assert log_sum_exp(v) == pytest.approx(math.log(np.exp(v).sum()), rel=1e-15)


def test_log_sum_exp_extreme_values():
    # naive exp overflows / underflows here
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0))
    assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000.0 + math.log(2.0))


def test_log_sum_exp_infinities():
    assert log_sum_exp([-np.inf, -np.inf]) == -np.inf
    assert log_sum_exp([-np.inf, 0.0]) == 0.0
    assert log_sum_exp([np.inf, 0.0]) == np.inf


def test_log_sum_exp_axis():
    v = np.log(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(log_sum_exp(v, axis=1), np.log([3.0, 7.0]))
    np.testing.assert_allclose(log_sum_exp(v, axis=0), np.log([4.0, 6.0]))


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(1, 20), elements=st.floats(-700, 700)),
       st.floats(-300, 300))
def test_log_sum_exp_shift_invariance(v, c):
    assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, rel=1e-9, abs=1e-9)


def test_normalize_log_weights_underflow():
    # exp(-2000) is zero in double precision; the normalized weights are not
    p = normalize_log_weights([-2000.0, -2000.0 + math.log(3.0)])
    np.testing.assert_allclose(p, [0.25, 0.75])


def test_normalize_log_weights_all_minus_inf():
    with pytest.raises(AllZeroWeights):
        normalize_log_weights([-np.inf, -np.inf])


def test_streams_reproducible():
    a = make_rng(7, 3).standard_normal(5)
    b = make_rng(7, 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)


def test_streams_distinct():
    a = make_rng(7, 3).standard_normal(5)
    b = make_rng(7, 4).standard_normal(5)
    c = make_rng(8, 3).standard_normal(5)
    d = make_rng(7, 3, purpose=1).standard_normal(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_child_seed_is_64_bit_and_stable():
    s = RngStream(1, 0).child_seed()
    assert 0 <= s < 2 ** 64
    assert s == RngStream(1, 0).child_seed()
    assert s != RngStream(1, 1).child_seed()


def test_negative_master_seed_accepted():
    make_rng(-5, 0).random()
