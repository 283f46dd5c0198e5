# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled core for the hot kernels.

Direct loop nests over typed memoryviews. Bit-identical to the numpy
fallback on every fixed-point path: same 32-bit MAC accumulate, same
64-bit bias alignment, same round-half-away-from-zero requantize with the
same negative-shift pre-clip. The real conv accumulates in float64 like
the fallback; only the summation order differs (BLAS there, plain loops
here), so real results may drift in the last ulp between backends.
"""

import numpy as np

from libc.stdint cimport int8_t, int32_t, int64_t

BACKEND = "compiled"


cdef inline int64_t _requant8(int64_t v, int shift) nogil:
    # mirrors sqj2.fxp.requantize_shift_array for word_len 8: shift right
    # with round-half-away-from-zero, exact left shift behind a pre-clip
    # that keeps the intermediate inside int64, then saturate to the rails
    cdef int64_t r, m, cap
    cdef int n
    if shift > 0:
        m = (<int64_t>1) << (shift - 1)
        if v >= 0:
            r = (v + m) >> shift
        else:
            r = -((-v + m) >> shift)
    elif shift < 0:
        n = -shift
        cap = (<int64_t>1) << (62 - n)
        if v > cap:
            v = cap
        elif v < -cap:
            v = -cap
        r = v << n
    else:
        r = v
    if r < -128:
        r = -128
    elif r > 127:
        r = 127
    return r


cdef inline void _check_shift(int shift):
    if shift > 62 or shift < -62:
        raise ValueError(f"shift {shift} outside supported envelope")


cdef inline int _out_dim(int size, int k, int s, int p) nogil:
    return (size + 2 * p - k) // s + 1


def conv_fixed(x, w, b, int stride, int pad, int bias_shift, int out_shift, bint relu):
    """int8 conv: int32 MACs, aligned bias, requantize, optional ReLU.

    The caller guarantees k*k*ci <= 4608 so the int32 accumulate is exact.
    """
    _check_shift(out_shift)
    cdef const int8_t[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.int8)
    cdef const int8_t[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.int8)
    cdef const int8_t[::1] bv = np.ascontiguousarray(b, dtype=np.int8)
    cdef int hi = xv.shape[0], wi = xv.shape[1], ci = xv.shape[2]
    cdef int co = wv.shape[0], k = wv.shape[1]
    cdef int ho = _out_dim(hi, k, stride, pad), wo = _out_dim(wi, k, stride, pad)
    out = np.empty((ho, wo, co), dtype=np.int8)
    cdef int8_t[:, :, ::1] ov = out
    cdef int oi, oj, oc, ki, kj, c, i0, j0, ii, jj
    cdef int32_t acc32
    cdef int64_t acc, code
    with nogil:
        for oi in range(ho):
            i0 = oi * stride - pad
            for oj in range(wo):
                j0 = oj * stride - pad
                for oc in range(co):
                    acc32 = 0
                    for ki in range(k):
                        ii = i0 + ki
                        if ii < 0 or ii >= hi:
                            continue
                        for kj in range(k):
                            jj = j0 + kj
                            if jj < 0 or jj >= wi:
                                continue
                            for c in range(ci):
                                acc32 += (<int32_t>xv[ii, jj, c]) * (<int32_t>wv[oc, ki, kj, c])
                    acc = (<int64_t>acc32) + ((<int64_t>bv[oc]) << bias_shift)
                    code = _requant8(acc, out_shift)
                    if relu and code < 0:
                        code = 0
                    ov[oi, oj, oc] = <int8_t>code
    return out


def conv_real(x, w, b, int stride, int pad, bint relu):
    """float conv, float64 accumulate; returns (out f32, pre-ReLU min/max)."""
    cdef const float[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef const float[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32)
    cdef const float[::1] bv = np.ascontiguousarray(b, dtype=np.float32)
    cdef int hi = xv.shape[0], wi = xv.shape[1], ci = xv.shape[2]
    cdef int co = wv.shape[0], k = wv.shape[1]
    cdef int ho = _out_dim(hi, k, stride, pad), wo = _out_dim(wi, k, stride, pad)
    out = np.empty((ho, wo, co), dtype=np.float32)
    cdef float[:, :, ::1] ov = out
    cdef int oi, oj, oc, ki, kj, c, i0, j0, ii, jj
    cdef double acc
    cdef double pre_min = np.inf, pre_max = -np.inf
    with nogil:
        for oi in range(ho):
            i0 = oi * stride - pad
            for oj in range(wo):
                j0 = oj * stride - pad
                for oc in range(co):
                    acc = 0.0
                    for ki in range(k):
                        ii = i0 + ki
                        if ii < 0 or ii >= hi:
                            continue
                        for kj in range(k):
                            jj = j0 + kj
                            if jj < 0 or jj >= wi:
                                continue
                            for c in range(ci):
                                acc += (<double>xv[ii, jj, c]) * (<double>wv[oc, ki, kj, c])
                    acc += <double>bv[oc]
                    if acc < pre_min:
                        pre_min = acc
                    if acc > pre_max:
                        pre_max = acc
                    if relu and acc < 0.0:
                        acc = 0.0
                    ov[oi, oj, oc] = <float>acc
    return out, pre_min, pre_max


def maxpool_int8(x, int k, int stride, int pad):
    # out-of-bounds taps are skipped against a -128 floor, which is the
    # same result as the fallback's -128 pad fill
    cdef const int8_t[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.int8)
    cdef int hi = xv.shape[0], wi = xv.shape[1], c = xv.shape[2]
    cdef int ho = _out_dim(hi, k, stride, pad), wo = _out_dim(wi, k, stride, pad)
    out = np.empty((ho, wo, c), dtype=np.int8)
    cdef int8_t[:, :, ::1] ov = out
    cdef int oi, oj, ch, ki, kj, i0, j0, ii, jj
    cdef int8_t best, v
    with nogil:
        for oi in range(ho):
            i0 = oi * stride - pad
            for oj in range(wo):
                j0 = oj * stride - pad
                for ch in range(c):
                    best = -128
                    for ki in range(k):
                        ii = i0 + ki
                        if ii < 0 or ii >= hi:
                            continue
                        for kj in range(k):
                            jj = j0 + kj
                            if jj < 0 or jj >= wi:
                                continue
                            v = xv[ii, jj, ch]
                            if v > best:
                                best = v
                    ov[oi, oj, ch] = best
    return out


def maxpool_real(x, int k, int stride, int pad):
    cdef const float[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef int hi = xv.shape[0], wi = xv.shape[1], c = xv.shape[2]
    cdef int ho = _out_dim(hi, k, stride, pad), wo = _out_dim(wi, k, stride, pad)
    out = np.empty((ho, wo, c), dtype=np.float32)
    cdef float[:, :, ::1] ov = out
    cdef int oi, oj, ch, ki, kj, i0, j0, ii, jj
    cdef float best, v
    cdef float neg_inf = -np.inf
    with nogil:
        for oi in range(ho):
            i0 = oi * stride - pad
            for oj in range(wo):
                j0 = oj * stride - pad
                for ch in range(c):
                    best = neg_inf
                    for ki in range(k):
                        ii = i0 + ki
                        if ii < 0 or ii >= hi:
                            continue
                        for kj in range(k):
                            jj = j0 + kj
                            if jj < 0 or jj >= wi:
                                continue
                            v = xv[ii, jj, ch]
                            if v > best:
                                best = v
                    ov[oi, oj, ch] = best
    return out


def bank_pixel_fixed(window, wbanks, bbanks, co_of_slot, int cho, int bias_shift, int out_shift):
    """One output pixel from the per-PE weight banks: int8[cho], no ReLU.

    wbanks is [par_fact, q_cho, k*k*ci], bbanks [par_fact, q_cho];
    co_of_slot maps (pe, slot) to the output channel, -1 for the zero-padded
    slots that exist only to square off the banks.
    """
    _check_shift(out_shift)
    cdef const int8_t[::1] win = np.ascontiguousarray(window, dtype=np.int8)
    cdef const int8_t[:, :, ::1] wv = np.ascontiguousarray(wbanks, dtype=np.int8)
    cdef const int8_t[:, ::1] bv = np.ascontiguousarray(bbanks, dtype=np.int8)
    cdef const int32_t[:, ::1] cov = np.ascontiguousarray(co_of_slot, dtype=np.int32)
    cdef int pf = wv.shape[0], q = wv.shape[1], kkci = wv.shape[2]
    if win.shape[0] != kkci:
        raise ValueError(f"window length {win.shape[0]} != k*k*ci {kkci}")
    out = np.empty(cho, dtype=np.int8)
    cdef int8_t[::1] ov = out
    cdef int p, j, t
    cdef int32_t ch, acc32
    cdef int64_t acc
    with nogil:
        for p in range(pf):
            for j in range(q):
                ch = cov[p, j]
                if ch < 0:
                    continue
                acc32 = 0
                for t in range(kkci):
                    acc32 += (<int32_t>win[t]) * (<int32_t>wv[p, j, t])
                acc = (<int64_t>acc32) + ((<int64_t>bv[p, j]) << bias_shift)
                ov[ch] = <int8_t>_requant8(acc, out_shift)
    return out
