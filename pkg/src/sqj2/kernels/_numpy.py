"""Vectorized numpy fallback for the hot kernels.

Bit-identical to the compiled core on every fixed-point path: the integer
arithmetic is exact, and rounding goes through the shared helpers in
sqj2.fxp. The real-valued conv accumulates in float64 like the compiled
core; only the summation order differs, so real results may drift in the
last ulp between backends (never within one install).
"""

from __future__ import annotations

import numpy as np

from ..fxp import requantize_shift_array

BACKEND = "fallback"


def _window_gather(xp: np.ndarray, h_out: int, w_out: int, k: int, stride: int) -> np.ndarray:
    """All K x K x C windows of a padded HWC map as [h_out*w_out, k*k*C]."""
    i0 = np.arange(h_out) * stride
    j0 = np.arange(w_out) * stride
    di = np.arange(k)
    windows = xp[
        i0[:, None, None, None] + di[None, None, :, None],
        j0[None, :, None, None] + di[None, None, None, :],
        :,
    ]
    return windows.reshape(h_out * w_out, k * k * xp.shape[2])


def _out_dim(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def conv_fixed(x, w, b, stride, pad, bias_shift, out_shift, relu):
    """int8 conv: int32 MACs, aligned bias, requantize, optional ReLU.

    The caller guarantees k*k*ci <= 4608 so the int32 accumulate is exact.
    """
    hi, wi, ci = x.shape
    co, k, _, _ = w.shape
    ho, wo = _out_dim(hi, k, stride, pad), _out_dim(wi, k, stride, pad)
    xp = np.zeros((hi + 2 * pad, wi + 2 * pad, ci), dtype=np.int32)
    xp[pad:pad + hi, pad:pad + wi] = x
    cols = _window_gather(xp, ho, wo, k, stride)
    acc = cols @ w.reshape(co, -1).astype(np.int32).T
    acc = acc.astype(np.int64) + (b.astype(np.int64) << bias_shift)
    out = requantize_shift_array(acc, out_shift)
    if relu:
        out = np.maximum(out, 0)
    return out.reshape(ho, wo, co)


def conv_real(x, w, b, stride, pad, relu):
    """float conv, float64 accumulate; returns (out f32, pre-ReLU min/max)."""
    hi, wi, ci = x.shape
    co, k, _, _ = w.shape
    ho, wo = _out_dim(hi, k, stride, pad), _out_dim(wi, k, stride, pad)
    xp = np.zeros((hi + 2 * pad, wi + 2 * pad, ci), dtype=np.float64)
    xp[pad:pad + hi, pad:pad + wi] = x
    cols = _window_gather(xp, ho, wo, k, stride)
    acc = cols @ w.reshape(co, -1).astype(np.float64).T + b.astype(np.float64)
    pre_min, pre_max = float(acc.min()), float(acc.max())
    if relu:
        acc = np.maximum(acc, 0.0)
    return acc.reshape(ho, wo, co).astype(np.float32), pre_min, pre_max


def _maxpool(x, k, stride, pad, fill):
    hi, wi, c = x.shape
    ho, wo = _out_dim(hi, k, stride, pad), _out_dim(wi, k, stride, pad)
    xp = np.full((hi + 2 * pad, wi + 2 * pad, c), fill, dtype=x.dtype)
    xp[pad:pad + hi, pad:pad + wi] = x
    cols = _window_gather(xp, ho, wo, k, stride).reshape(ho * wo, k * k, c)
    return cols.max(axis=1).reshape(ho, wo, c)


def maxpool_int8(x, k, stride, pad):
    # the caller guarantees pad < k, so no window is all padding; the -128
    # fill can then only win when the true maximum is itself -128
    return _maxpool(x, k, stride, pad, np.int8(-128))


def maxpool_real(x, k, stride, pad):
    return _maxpool(x, k, stride, pad, np.float32(-np.inf))


def bank_pixel_fixed(window, wbanks, bbanks, co_of_slot, cho, bias_shift, out_shift):
    """One output pixel from the per-PE weight banks: int8[cho], no ReLU.

    wbanks is [par_fact, q_cho, k*k*ci], bbanks [par_fact, q_cho];
    co_of_slot maps (pe, slot) to the output channel, -1 for the zero-padded
    slots that exist only to square off the banks.
    """
    pf, q, kkci = wbanks.shape
    acc = wbanks.reshape(pf * q, kkci).astype(np.int32) @ window.astype(np.int32)
    acc = acc.astype(np.int64) + (bbanks.reshape(-1).astype(np.int64) << bias_shift)
    codes = requantize_shift_array(acc, out_shift)
    slots = co_of_slot.reshape(-1)
    valid = slots >= 0
    out = np.empty(cho, dtype=np.int8)
    out[slots[valid]] = codes[valid]
    return out
