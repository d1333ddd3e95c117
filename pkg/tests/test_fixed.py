import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import OVERFLOW_MODES, ROUND_MODES, quantize_exact, quantize_scalar
from pqforge.errors import ConfigError
from pqforge.quantization.fixed import (
    FixedPointSpec,
    RoundMode,
    derive_integer_bits,
    parse_round_mode,
    quantize_array,
    quantize_fixed,
    representable_range,
)

formats = st.tuples(st.integers(0, 1), st.integers(-2, 4), st.integers(0, 6)).filter(lambda t: sum(t) >= 1)
finite = st.floats(-40, 40, allow_nan=False, allow_infinity=False)


def test_zero_maps_to_zero():
    for rm in ROUND_MODES:
        for om in OVERFLOW_MODES:
            assert quantize_fixed(np.array([0.0]), FixedPointSpec(1, 2, 3, rm, om))[0] == 0.0


def test_hand_examples():
    assert quantize_fixed(0.30, FixedPointSpec(1, 0, 2, "RND", "SAT")) == 0.25
    assert quantize_fixed(3.7, FixedPointSpec(1, 2, 1, "RND", "SAT")) == 3.5
    assert quantize_fixed(0.375, FixedPointSpec(1, 0, 2, "RND_CONV", "SAT")) == 0.5
    assert quantize_fixed(0.125, FixedPointSpec(1, 0, 2, "RND_CONV", "SAT")) == 0.0


def test_tie_rules():
    x = np.array([0.5, 1.5, -0.5, -1.5, 2.5])
    expect = {
        "TRN": [0, 1, -1, -2, 2],
        "TRN_ZERO": [0, 1, 0, -1, 2],
        "RND": [1, 2, 0, -1, 3],
        "RND_MIN_INF": [0, 1, -1, -2, 2],
        "RND_ZERO": [0, 1, 0, -1, 2],
        "RND_INF": [1, 2, -1, -2, 3],
        "RND_CONV": [0, 2, 0, -2, 2],
    }
    for mode, want in expect.items():
        assert quantize_array(x, 1, 4, 0, mode, "SAT").tolist() == want, mode


def test_overflow_modes():
    # (1, 1, 0): mantissas -2..1
    x = np.array([2.0, 3.0, -3.0, -2.0])
    assert quantize_array(x, 1, 1, 0, "TRN", "SAT").tolist() == [1, 1, -2, -2]
    assert quantize_array(x, 1, 1, 0, "TRN", "SAT_SYM").tolist() == [1, 1, -1, -1]
    assert quantize_array(x, 1, 1, 0, "TRN", "WRAP").tolist() == [-2, -1, 1, -2]
    assert quantize_array(x, 1, 1, 0, "TRN", "WRAP_SM").tolist() == [0, 1, -1, 0]


def test_unsigned_sign_magnitude_wrap_matches_wrap():
    x = np.array([-0.25, -3.0, 5.5])
    assert np.array_equal(quantize_array(x, 0, 1, 2, "RND", "WRAP_SM"), quantize_array(x, 0, 1, 2, "RND", "WRAP"))


def test_rn_zero_alias():
    assert parse_round_mode("RN_ZERO") is RoundMode.TRN_ZERO


def test_invalid_specs():
    with pytest.raises(ConfigError):
        FixedPointSpec(2, 0, 3)
    with pytest.raises(ConfigError):
        FixedPointSpec(0, -3, 2)
    with pytest.raises(ConfigError):
        FixedPointSpec(1, 0, 2, "BANANA")


def test_nan_rejected():
    with pytest.raises(ValueError):
        quantize_fixed(np.array([np.nan]), FixedPointSpec(1, 0, 2))


def test_spec_bounds():
    s = FixedPointSpec(1, 2, 1)
    assert (s.bits, s.max_value, s.min_value, s.step) == (4, 3.5, -4.0, 0.5)
    assert representable_range(1, 2, 1, "SAT_SYM") == (-3.5, 3.5)


def test_scalar_oracle_agrees_with_vector_oracle(rng):
    x = np.round(rng.normal(scale=3, size=400) * 16) / 16
    for rm in ROUND_MODES:
        for om in OVERFLOW_MODES:
            vec = quantize_exact(x, 1, 1, 2, rm, om)
            assert all(vec[j] == quantize_scalar(float(x[j]), 1, 1, 2, rm, om) for j in range(len(x)))


@settings(max_examples=300, deadline=None)
@given(finite, formats, st.sampled_from(ROUND_MODES), st.sampled_from(OVERFLOW_MODES))
def test_matches_fraction_oracle(x, fmt, rm, om):
    k, i, f = fmt
    assert quantize_fixed(np.array([x]), FixedPointSpec(k, i, f, rm, om))[0] == quantize_scalar(x, k, i, f, rm, om)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=30), formats, st.sampled_from(ROUND_MODES),
       st.sampled_from(OVERFLOW_MODES))
def test_output_on_grid_and_in_range(xs, fmt, rm, om):
    k, i, f = fmt
    spec = FixedPointSpec(k, i, f, rm, om)
    q = quantize_fixed(np.array(xs), spec)
    scaled = q * 2.0 ** f
    assert np.all(scaled == np.round(scaled))
    assert np.all(q <= spec.max_value) and np.all(q >= spec.min_value)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=30), formats, st.sampled_from(ROUND_MODES),
       st.sampled_from(OVERFLOW_MODES))
def test_idempotent(xs, fmt, rm, om):
    spec = FixedPointSpec(*fmt, rm, om)
    q = quantize_fixed(np.array(xs), spec)
    assert np.array_equal(quantize_fixed(q, spec), q)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=2, max_size=30), formats, st.sampled_from(ROUND_MODES),
       st.sampled_from(("SAT", "SAT_SYM")))
def test_monotone_under_saturation(xs, fmt, rm, om):
    x = np.sort(np.array(xs))
    q = quantize_fixed(x, FixedPointSpec(*fmt, rm, om))
    assert np.all(np.diff(q) >= 0)


def test_float32_keeps_dtype():
    x = np.array([0.3, -1.7], dtype=np.float32)
    assert quantize_array(x, 1, 2, 3).dtype == np.float32


def test_derive_integer_bits_examples():
    i, f = derive_integer_bits(np.array([1.5, -0.2]), "per_tensor", 8, 1)
    assert int(i.ravel()[0]) == 1 and int(f.ravel()[0]) == 6
    i, _ = derive_integer_bits(np.array([0.4, 0.1]), "per_tensor", 8, 1)
    assert int(i.ravel()[0]) == -1
    W = np.array([[0.0, 3.0], [0.0, -1.0]])
    i, f = derive_integer_bits(W, "per_channel", 8, 1, channel_axis=1)
    assert i.ravel().tolist() == [0, 2] and f.ravel().tolist() == [7, 5]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=20), st.integers(4, 12),
       st.sampled_from(("per_tensor", "per_weight")))
def test_derived_range_covers_max_without_clipping(ws, bits, gran):
    W = np.array(ws)
    i, f = derive_integer_bits(W, gran, bits, 1)
    q = quantize_array(W, 1, i, f, "RND", "SAT")
    # the largest magnitude in each group survives up to one rounding step
    assert np.all(np.abs(q - W) <= np.ldexp(0.5, -f))
    top = np.max(np.abs(W)) if gran == "per_tensor" else np.abs(W)
    assert np.all(top <= np.ldexp(1.0, i))
