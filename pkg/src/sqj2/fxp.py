"""Dynamic fixed-point arithmetic primitives.

Every datapath in this package (the reference operators, the accelerator
emulation, the quantizer) goes through the functions in this module, so any
equality statement between two datapaths is a statement about scheduling and
data movement, never about rounding.

Conventions
-----------
* a code ``c`` in format ``(word_len, frac_len)`` represents the real value
  ``c * 2**-frac_len``; codes are two's-complement ``word_len``-bit integers
* ``frac_len`` is a signed integer and may be negative or exceed
  ``word_len - 1`` (dynamic fixed point)
* rounding is round-half-away-from-zero everywhere, governed by ``ROUNDING``
* multiply-accumulate happens in a 32-bit accumulator whose fractional
  length is ``input.frac_len + weight.frac_len``

The scalar functions use Python integers and are exact for any shift; the
array helpers mirror them bit-for-bit on the ranges the graph loader admits
(see MAX_BIAS_SHIFT / output shift bounds in sqj2.graph).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# The single rounding mode used by every op below. Swapping the tie rule
# means replacing _round_half_away and round_half_away_array consistently.
ROUNDING = "half_away_from_zero"

WORD_LENS = (8, 16, 32)

# 3x3 kernel on 512 input channels. With |a*w| <= 128*128 the accumulator
# magnitude stays below 4608*128*128 = 75,497,472 < 2**31, so 32 bits never
# overflow for any layer this bound admits.
MAX_KKCHI = 4608
MAX_ABS_ACC = MAX_KKCHI * 128 * 128


@dataclass(frozen=True)
class FxpFormat:
    """Word length plus signed fractional length."""

    frac_len: int
    word_len: int = 8

    def __post_init__(self):
        if self.word_len not in WORD_LENS:
            raise ValueError(f"word_len must be one of {WORD_LENS}, got {self.word_len}")

    @property
    def min_code(self) -> int:
        return -(1 << (self.word_len - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.word_len - 1)) - 1

    @property
    def lsb(self) -> float:
        return math.ldexp(1.0, -self.frac_len)

    @property
    def min_value(self) -> float:
        return self.min_code * self.lsb

    @property
    def max_value(self) -> float:
        return self.max_code * self.lsb


@dataclass
class AccumValue:
    """32-bit accumulator state: raw integer plus its fractional length."""

    value: int
    frac_len: int


def _round_half_away(y: float) -> int:
    # floor(|y|) and |y| - floor(|y|) are both exact in binary64 for the
    # magnitudes seen here, so the tie comparison is exact; the naive
    # floor(y + 0.5) trick double-rounds near representation boundaries.
    a = abs(y)
    f = math.floor(a)
    r = f + 1 if a - f >= 0.5 else f
    return -r if y < 0 else r


def quantize(x: float, fmt: FxpFormat) -> int:
    """Real value to saturated code: clamp(round(x * 2**frac_len))."""
    return _saturate(_round_half_away(x * math.ldexp(1.0, fmt.frac_len)), fmt.word_len)


def dequantize(code: int, fmt: FxpFormat) -> float:
    return math.ldexp(float(code), -fmt.frac_len)


def _saturate(v: int, word_len: int) -> int:
    lo = -(1 << (word_len - 1))
    hi = (1 << (word_len - 1)) - 1
    return lo if v < lo else hi if v > hi else v


def mac(acc: AccumValue, a: int, w: int) -> AccumValue:
    """acc += a * w, exact. The 32-bit contract is checked, not wrapped."""
    acc.value += a * w
    if not -(1 << 31) <= acc.value < (1 << 31):
        raise OverflowError(f"accumulator left 32-bit range: {acc.value}")
    return acc


def align_bias(b: int, b_fmt: FxpFormat, acc_frac: int) -> AccumValue:
    """Left-shift a bias code onto the accumulator grid."""
    if acc_frac < b_fmt.frac_len:
        raise ValueError(
            f"bias frac_len {b_fmt.frac_len} exceeds accumulator frac_len {acc_frac}; "
            "requantizing a bias downward would lose precision silently"
        )
    return AccumValue(b << (acc_frac - b_fmt.frac_len), acc_frac)


def requantize(acc: AccumValue, out_fmt: FxpFormat) -> int:
    """Accumulator to output code: arithmetic shift with rounding, saturate.

    shift = acc.frac_len - out_fmt.frac_len. A negative shift is an exact
    left shift. Python integers make this exact for any shift.
    """
    s = acc.frac_len - out_fmt.frac_len
    v = acc.value
    if s > 0:
        # round-half-away-from-zero on v / 2**s, exactly
        m = 1 << (s - 1)
        r = (v + m) >> s if v >= 0 else -((-v + m) >> s)
    elif s < 0:
        r = v << -s
    else:
        r = v
    return _saturate(r, out_fmt.word_len)


def dequantize_accum(acc: AccumValue) -> float:
    return math.ldexp(float(acc.value), -acc.frac_len)


# ---------------------------------------------------------------------------
# array helpers (vectorized mirrors of the scalar semantics)
# ---------------------------------------------------------------------------

_CODE_DTYPES = {8: np.int8, 16: np.int16, 32: np.int32}


def round_half_away_array(y: np.ndarray) -> np.ndarray:
    """Exact round-half-away-from-zero of a float64 array, as int64."""
    a = np.abs(y)
    f = np.floor(a)
    r = f + (a - f >= 0.5)
    return np.where(y < 0, -r, r).astype(np.int64)


def quantize_array(x: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    scaled = np.asarray(x, dtype=np.float64) * math.ldexp(1.0, fmt.frac_len)
    r = round_half_away_array(scaled)
    return np.clip(r, fmt.min_code, fmt.max_code).astype(_CODE_DTYPES[fmt.word_len])


def dequantize_array(codes: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    return codes.astype(np.float64) * math.ldexp(1.0, -fmt.frac_len)


def requantize_shift_array(acc: np.ndarray, shift: int, word_len: int = 8) -> np.ndarray:
    """Vectorized requantize of int accumulators by ``shift = acc_fl - out_fl``.

    Exact for |acc| < 2**59 and shift in [-16, 62], the envelope the graph
    loader guarantees (see sqj2.graph). Matches the scalar requantize.
    """
    v = acc.astype(np.int64)
    if shift > 62 or shift < -62:
        raise ValueError(f"shift {shift} outside supported envelope")
    if shift > 0:
        m = np.int64(1) << (shift - 1)
        r = np.where(v >= 0, (v + m) >> shift, -((-v + m) >> shift))
    elif shift < 0:
        # pre-clip so the left shift cannot leave int64: anything at the
        # clip bound lands on +/-2**62 after shifting, beyond every
        # supported output rail, so the final clip gives the exact answer
        n = -shift
        cap = np.int64(1) << (62 - n)
        r = np.clip(v, -cap, cap) << np.int64(n)
    else:
        r = v
    lo = -(1 << (word_len - 1))
    hi = (1 << (word_len - 1)) - 1
    return np.clip(r, lo, hi).astype(_CODE_DTYPES[word_len])
