"""Compiled core vs numpy fallback on the hot kernels.

Times each backend on the same inputs, checks the fixed-point results agree
bit for bit while at it, and reports per-call time plus speedup. The
end-to-end row drives a full accelerator invocation with the kernel
bindings swapped, so it reflects what SQJ2_PURE=1 costs in practice.

    python benchmarks/bench_kernels.py --repeats 30
"""

import argparse
import contextlib
import time

import numpy as np

from sqj2 import kernels
from sqj2.accel.model import AccelConfig, ConvInvocation, WeightBanks, accel_conv
from sqj2.fmap import FeatureMap
from sqj2.fxp import FxpFormat
from sqj2.graph import ConvSpec
from sqj2.params import ParamBlob

SEED = 1234
SWAPPED = ("conv_fixed", "conv_real", "maxpool_int8", "maxpool_real",
           "bank_pixel_fixed")

# (h, w, chi, cho, k, s, p) conv cases, small-net flavored
CONV_CASES = [
    ("squeeze 1x1", (56, 56, 16, 16, 1, 1, 0)),
    ("expand 3x3", (32, 32, 32, 64, 3, 1, 1)),
    ("deep 3x3", (16, 16, 64, 64, 3, 1, 1)),
]


@contextlib.contextmanager
def use_backend(impl):
    """Rebind the kernel entry points to one backend module."""
    saved = {name: getattr(kernels, name) for name in SWAPPED}
    try:
        for name in SWAPPED:
            setattr(kernels, name, getattr(impl, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def timed(fn, repeats):
    """Median seconds per call after one warmup."""
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return sorted(samples)[len(samples) // 2]


def bench_conv(case, impls, repeats, rng):
    h, w, chi, cho, k, s, p = case
    x = rng.integers(-128, 128, size=(h, w, chi), dtype=np.int8)
    wts = rng.integers(-128, 128, size=(cho, k, k, chi), dtype=np.int8)
    b = rng.integers(-128, 128, size=(cho,), dtype=np.int8)
    outs, times = {}, {}
    for name, impl in impls.items():
        outs[name] = impl.conv_fixed(x, wts, b, s, p, 6, 8, True)
        times[name] = timed(lambda f=impl: f.conv_fixed(x, wts, b, s, p, 6, 8, True),
                            repeats)
    _assert_agree(outs)
    return times


def bench_maxpool(impls, repeats, rng):
    x = rng.integers(-128, 128, size=(32, 32, 64), dtype=np.int8)
    outs, times = {}, {}
    for name, impl in impls.items():
        outs[name] = impl.maxpool_int8(x, 3, 2, 0)
        times[name] = timed(lambda f=impl: f.maxpool_int8(x, 3, 2, 0), repeats)
    _assert_agree(outs)
    return times


def bench_bank_pixel(impls, repeats, rng):
    co, k, chi, pf = 64, 3, 32, 16
    wts = rng.integers(-128, 128, size=(co, k, k, chi), dtype=np.int8)
    b = rng.integers(-128, 128, size=(co,), dtype=np.int8)
    banks = WeightBanks(ParamBlob("b", wts, b, 7, 7), pf)
    win = rng.integers(-128, 128, size=(k * k * chi,), dtype=np.int8)
    outs, times = {}, {}
    for name, impl in impls.items():
        args = (win, banks.weights, banks.biases, banks.co_of_slot, co, 6, 8)
        outs[name] = impl.bank_pixel_fixed(*args)
        times[name] = timed(lambda f=impl: f.bank_pixel_fixed(*args), repeats)
    _assert_agree(outs)
    return times


def bench_invocation(impls, repeats, rng):
    # one full emulated invocation: line buffer, window pair, write-back
    spec = ConvSpec(16, 16, 32, 3, 1, 1, 32, use_relu=True)
    cfg = AccelConfig(par_fact=16, chi_num=16, k_max=3, wi_x_chi_max=18 * 32,
                      kxkxchi_max=9 * 32, q_choxkxkxchi_max=2 * 9 * 32,
                      q_cho_max=2, cho_max=32)
    x = FeatureMap(rng.integers(-128, 128, size=(16, 16, 32), dtype=np.int8),
                   FxpFormat(6))
    wts = rng.integers(-128, 128, size=(32, 3, 3, 32), dtype=np.int8)
    b = rng.integers(-128, 128, size=(32,), dtype=np.int8)
    banks = WeightBanks(ParamBlob("l", wts, b, 7, 7), cfg.par_fact)
    inv = ConvInvocation("l", spec, 6, 5, 7, 7)
    outs, times = {}, {}
    for name, impl in impls.items():
        with use_backend(impl):
            outs[name] = accel_conv(inv, x, banks, cfg)[0].data
            times[name] = timed(lambda: accel_conv(inv, x, banks, cfg),
                                max(3, repeats // 4))
    _assert_agree(outs)
    return times


def _assert_agree(outs):
    names = sorted(outs)
    for other in names[1:]:
        assert np.array_equal(outs[names[0]], outs[other]), \
            f"{names[0]} and {other} disagree"


def main():
    ap = argparse.ArgumentParser(description="hot-kernel backend benchmark")
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()

    impls = kernels.backends()
    print(f"backends: {', '.join(sorted(impls))} "
          f"(default import picks: {kernels.BACKEND})")
    if len(impls) < 2:
        print("compiled core missing; timing the fallback alone")

    rng = np.random.default_rng(SEED)
    rows = []
    for label, case in CONV_CASES:
        rows.append((f"conv_fixed {label}",
                     bench_conv(case, impls, args.repeats, rng)))
    rows.append(("maxpool_int8 32x32x64", bench_maxpool(impls, args.repeats, rng)))
    rows.append(("bank_pixel 64co 3x3x32", bench_bank_pixel(impls, args.repeats, rng)))
    rows.append(("accel_conv 16x16x32->32", bench_invocation(impls, args.repeats, rng)))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'fallback':>10}  {'compiled':>10}  {'speedup':>7}")
    for label, times in rows:
        fb = times.get("fallback")
        cc = times.get("compiled")
        fb_s = f"{fb * 1e3:.3f}ms" if fb else "-"
        cc_s = f"{cc * 1e3:.3f}ms" if cc else "-"
        ratio = f"{fb / cc:5.1f}x" if fb and cc else "-"
        print(f"{label:<{width}}  {fb_s:>10}  {cc_s:>10}  {ratio:>7}")


if __name__ == "__main__":
    main()
