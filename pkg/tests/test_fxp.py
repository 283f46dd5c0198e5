import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from sqj2.fxp import (
    MAX_ABS_ACC,
    MAX_KKCHI,
    AccumValue,
    FxpFormat,
    align_bias,
    dequantize,
    dequantize_accum,
    mac,
    quantize,
    quantize_array,
    requantize,
    requantize_shift_array,
    round_half_away_array,
)


class TestFormat:
    def test_code_range(self):
        f = FxpFormat(7)
        assert (f.min_code, f.max_code) == (-128, 127)
        assert f.lsb == 1 / 128
        assert f.min_value == -1.0
        assert f.max_value == 127 / 128

    def test_word_lengths(self):
        for w in (8, 16, 32):
            FxpFormat(0, w)
        with pytest.raises(ValueError):
            FxpFormat(0, 12)

    def test_negative_and_oversized_fl(self):
        assert FxpFormat(-3).lsb == 8.0
        assert FxpFormat(15).lsb == 2.0 ** -15

    def test_accumulator_bound_headroom(self):
        assert MAX_ABS_ACC == MAX_KKCHI * 128 * 128
        assert MAX_ABS_ACC < 2 ** 31


class TestQuantize:
    def test_examples(self):
        assert quantize(0.5, FxpFormat(7)) == 64
        assert quantize(2.0, FxpFormat(7)) == 127
        assert quantize(-0.00390625, FxpFormat(7)) == -1

    def test_dequantize_examples(self):
        assert dequantize(64, FxpFormat(7)) == 0.5
        assert dequantize(-128, FxpFormat(7)) == -1.0
        assert dequantize(127, FxpFormat(0)) == 127.0

    def test_half_codes_round_away(self):
        # +/- 0.5 LSB exactly must move away from zero
        f = FxpFormat(7)
        assert quantize(1.5 / 128, f) == 2
        assert quantize(-1.5 / 128, f) == -2

    @given(st.floats(-1.0, 127 / 128), st.integers(-8, 15))
    def test_round_trip_half_lsb(self, x, fl):
        f = FxpFormat(fl)
        x = x * f.lsb * 128  # scale into range of this format
        err = abs(dequantize(quantize(x, f), f) - x)
        assert err <= f.lsb / 2 + 1e-15 * abs(x)

    @given(st.integers(-300, 300), st.integers(-180, 180), st.integers(-8, 12))
    def test_monotone(self, a, b, fl):
        f = FxpFormat(fl)
        lo, hi = sorted((a * f.lsb / 2, b * f.lsb / 2))
        assert quantize(lo, f) <= quantize(hi, f)

    @given(st.integers(-20000, 20000), st.integers(-8, 12))
    def test_matches_oracle(self, n, fl):
        x = n / 512
        assert quantize(x, FxpFormat(fl)) == oracles.quantize(Fraction(n, 512), fl)


class TestMac:
    def test_examples(self):
        acc = AccumValue(0, 0)
        assert mac(acc, 3, 2).value == 6
        assert mac(acc, -1, 6).value == 0
        assert mac(AccumValue(0, 0), 127, 127).value == 16129

    def test_overflow_rejected(self):
        acc = AccumValue((1 << 31) - 1, 0)
        with pytest.raises(OverflowError):
            mac(acc, 1, 1)

    @given(st.lists(st.tuples(st.integers(-128, 127), st.integers(-128, 127)),
                    max_size=32))
    def test_permutation_invariance(self, pairs):
        fwd = AccumValue(0, 0)
        rev = AccumValue(0, 0)
        for a, w in pairs:
            mac(fwd, a, w)
        for a, w in reversed(pairs):
            mac(rev, a, w)
        assert fwd.value == rev.value


class TestAlignBias:
    def test_examples(self):
        assert align_bias(1, FxpFormat(0), 14).value == 16384
        assert align_bias(0, FxpFormat(5), 9).value == 0
        assert align_bias(-5, FxpFormat(7), 14).value == -640

    def test_downshift_rejected(self):
        with pytest.raises(ValueError):
            align_bias(1, FxpFormat(10), 7)


class TestRequantize:
    def test_derived_examples(self):
        # frozen from the exact rational oracle
        assert oracles.requantize(16129, 14, 7) == 126
        assert requantize(AccumValue(16129, 14), FxpFormat(7)) == 126
        assert oracles.requantize(-129, 8, 7) == -65
        assert requantize(AccumValue(-129, 8), FxpFormat(7)) == -65
        assert oracles.requantize(10 ** 6, 14, 0) == 61
        assert requantize(AccumValue(10 ** 6, 14), FxpFormat(0)) == 61

    def test_negative_shift_is_exact(self):
        assert requantize(AccumValue(3, 0), FxpFormat(5)) == 96
        assert requantize(AccumValue(1, 0), FxpFormat(9)) == 127  # saturates

    @given(st.integers(-(2 ** 31), 2 ** 31 - 1), st.integers(0, 20),
           st.integers(-8, 15))
    def test_equals_quantized_real(self, v, acc_fl, out_fl):
        acc = AccumValue(v, acc_fl)
        got = requantize(acc, FxpFormat(out_fl))
        assert got == oracles.requantize(v, acc_fl, out_fl)
        assert got == quantize(dequantize_accum(acc), FxpFormat(out_fl)) or \
            abs(v) > 2 ** 52  # float53 cannot carry bigger exactly

    @given(st.integers(-(2 ** 31), 2 ** 31 - 1), st.integers(0, 20))
    def test_zero_shift_saturates_only(self, v, fl):
        got = requantize(AccumValue(v, fl), FxpFormat(fl))
        assert got == max(-128, min(127, v))


class TestArrayHelpers:
    @given(st.lists(st.integers(-4000, 4000), min_size=1, max_size=50))
    def test_round_half_away_array(self, nums):
        y = np.array([n / 8 for n in nums], dtype=np.float64)
        got = round_half_away_array(y)
        want = [oracles.round_half_away(Fraction(n, 8)) for n in nums]
        assert got.tolist() == want

    @given(st.lists(st.integers(-5000, 5000), min_size=1, max_size=40),
           st.integers(-8, 12))
    def test_quantize_array_matches_scalar(self, nums, fl):
        f = FxpFormat(fl)
        xs = np.array([n / 256 for n in nums])
        got = quantize_array(xs, f)
        assert got.tolist() == [quantize(float(x), f) for x in xs]
        assert got.dtype == np.int8

    @given(st.lists(st.integers(-(2 ** 40), 2 ** 40), min_size=1, max_size=40),
           st.integers(-16, 48))
    def test_requantize_array_matches_scalar(self, vals, shift):
        accs = np.array(vals, dtype=np.int64)
        got = requantize_shift_array(accs, shift)
        want = [requantize(AccumValue(int(v), shift), FxpFormat(0)) for v in vals]
        assert got.tolist() == want

    def test_requantize_array_envelope(self):
        with pytest.raises(ValueError):
            requantize_shift_array(np.array([1]), 63)
        with pytest.raises(ValueError):
            requantize_shift_array(np.array([1]), -63)

    def test_requantize_array_negative_shift_no_overflow(self):
        # values beyond the pre-clip would overflow int64 if shifted raw
        big = np.array([2 ** 60, -(2 ** 60)], dtype=np.int64)
        got = requantize_shift_array(big, -16)
        assert got.tolist() == [127, -128]
