"""Reference operators: the golden model every other datapath is held to.

conv_ref is a direct convolution over the whole tensor with no knowledge of
caches or schedules; the accelerator emulation in sqj2.accel must match it
bit for bit. Fixed and real arithmetic share one entry point and dispatch on
the feature map dtype. The heavy loops live in sqj2.kernels (compiled core
or numpy fallback, integer-exact either way).
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from . import kernels
from .fmap import FeatureMap
from .fxp import MAX_KKCHI, FxpFormat, dequantize_array
from .graph import ConvSpec, NetworkGraph, PoolSpec
from .params import ParamBlob


def conv_ref(fmap: FeatureMap, spec: ConvSpec, blob: ParamBlob,
             out_fl: Optional[int] = None, stats: Optional[dict] = None) -> FeatureMap:
    """2-D convolution with per-layer formats.

    Fixed mode (int8 map + int8 blob): int32 accumulate at
    fl_acc = fl_in + fl_w, bias aligned up to the accumulator grid,
    round-half-away requantize to out_fl, ReLU on the output code.
    Real mode (float map + float blob): float64 accumulate.

    ``stats``, when given, receives the pre-ReLU accumulator extrema as
    reals (the quantizer calibrates on these).
    """
    if fmap.shape != (spec.h_in, spec.w_in, spec.ch_in):
        raise ValueError(f"feature map {fmap.shape} does not match spec "
                         f"{(spec.h_in, spec.w_in, spec.ch_in)}")
    if (blob.co, blob.k, blob.ci) != (spec.ch_out, spec.kernel, spec.ch_in):
        raise ValueError(f"blob {blob.name!r} geometry "
                         f"{(blob.co, blob.k, blob.ci)} does not match spec")
    kkci = spec.kernel * spec.kernel * spec.ch_in
    if kkci > MAX_KKCHI:
        raise ValueError(f"k*k*ci = {kkci} exceeds the 32-bit accumulator bound {MAX_KKCHI}")

    if fmap.is_fixed:
        if not blob.is_fixed:
            raise ValueError("fixed feature map needs a fixed blob")
        if out_fl is None:
            raise ValueError("fixed conv needs out_fl")
        acc_fl = fmap.fmt.frac_len + blob.w_fl
        if acc_fl < blob.b_fl:
            raise ValueError(f"bias frac_len {blob.b_fl} exceeds accumulator {acc_fl}")
        out = kernels.conv_fixed(
            fmap.data, blob.weights, blob.biases, spec.stride, spec.pad,
            acc_fl - blob.b_fl, acc_fl - out_fl, spec.use_relu,
        )
        if stats is not None:
            # calibration runs the real datapath; nothing to report here
            stats["pre_relu_min"] = None
            stats["pre_relu_max"] = None
        return FeatureMap(out, FxpFormat(out_fl))

    if blob.is_fixed:
        raise ValueError("real feature map needs a real blob")
    out, pre_min, pre_max = kernels.conv_real(
        fmap.data, blob.weights, blob.biases, spec.stride, spec.pad, spec.use_relu
    )
    if stats is not None:
        stats["pre_relu_min"] = pre_min
        stats["pre_relu_max"] = pre_max
    return FeatureMap(out)


def maxpool_ref(fmap: FeatureMap, pool: PoolSpec) -> FeatureMap:
    """Max pooling; padding contributes nothing a real element cannot beat."""
    if pool.pad >= pool.kernel:
        raise ValueError("pool pad must be smaller than the kernel")
    if fmap.is_fixed:
        out = kernels.maxpool_int8(fmap.data, pool.kernel, pool.stride, pool.pad)
        return FeatureMap(out, fmap.fmt)
    out = kernels.maxpool_real(fmap.data, pool.kernel, pool.stride, pool.pad)
    return FeatureMap(out)


def concat_ref(fmaps: List[FeatureMap]) -> FeatureMap:
    """Channel concatenation; fixed inputs must share one format."""
    first = fmaps[0]
    for f in fmaps[1:]:
        if (f.h, f.w) != (first.h, first.w):
            raise ValueError("concat inputs disagree spatially")
        if f.is_fixed != first.is_fixed:
            raise ValueError("concat inputs mix fixed and real")
        if f.is_fixed and f.fmt != first.fmt:
            raise ValueError(f"concat inputs have different formats: {f.fmt} vs {first.fmt}")
    data = np.concatenate([f.data for f in fmaps], axis=2)
    return FeatureMap(data, first.fmt)


def global_avgpool_ref(fmap: FeatureMap, out_fl: Optional[int] = None) -> FeatureMap:
    """Whole-map mean per channel.

    Fixed mode sums codes in 64-bit and performs the single division inside
    an exact integer round-half-away requantize to out_fl.
    """
    h, w = fmap.h, fmap.w
    if fmap.is_fixed:
        if out_fl is None:
            out_fl = fmap.fmt.frac_len
        sums = fmap.data.astype(np.int64).sum(axis=(0, 1))
        e = out_fl - fmap.fmt.frac_len
        den = h * w
        # round-half-away of sum * 2**e / den, exactly in integers
        num = [int(s) << e if e >= 0 else int(s) for s in sums]
        d = den if e >= 0 else den << -e
        out = np.empty(fmap.c, dtype=np.int8)
        for i, v in enumerate(num):
            a = abs(v)
            r = (2 * a + d) // (2 * d)
            r = -r if v < 0 else r
            out[i] = max(-128, min(127, r))
        return FeatureMap(out.reshape(1, 1, fmap.c), FxpFormat(out_fl))
    mean = fmap.data.astype(np.float64).mean(axis=(0, 1))
    return FeatureMap(mean.reshape(1, 1, fmap.c).astype(np.float32))


def softmax_ref(fmap: FeatureMap) -> FeatureMap:
    """Softmax over the channel vector of a 1x1xC map, in reals."""
    if (fmap.h, fmap.w) != (1, 1):
        raise ValueError("softmax expects a 1x1xC map")
    x = fmap.to_real().data.astype(np.float64).reshape(-1)
    x = x - x.max()
    e = np.exp(x)
    p = e / e.sum()
    return FeatureMap(p.reshape(1, 1, -1).astype(np.float32))


def forward_ref(graph: NetworkGraph, blobs: Dict[str, ParamBlob], input_map: FeatureMap,
                observer=None) -> Dict[str, FeatureMap]:
    """Run the whole graph in reference arithmetic.

    Mode follows the input map: int8 input (with per-node formats present and
    int8 blobs) runs the fixed datapath; a float input with real blobs runs
    the real datapath. Returns every node's output keyed by name.
    ``observer(name, node, stats)`` is called per conv with the pre-ReLU
    extrema, which is what calibration hooks into.
    """
    from .transforms import apply_rewrite  # local import, avoids a cycle

    fixed = input_map.is_fixed
    if input_map.shape != graph.input_shape:
        raise ValueError(f"input {input_map.shape} does not match graph {graph.input_shape}")
    if fixed and graph.input_fl is not None and input_map.fmt.frac_len != graph.input_fl:
        raise ValueError(f"input fl {input_map.fmt.frac_len} != graph fl_in {graph.input_fl}")

    values: Dict[str, FeatureMap] = {"input": input_map}
    for node in graph.nodes:
        srcs = [values[s] for s in node.inputs]
        if node.kind == "conv":
            blob = blobs.get(node.name)
            if blob is None:
                raise ValueError(f"no parameter blob for conv node {node.name!r}")
            if fixed and node.fl_out is None:
                raise ValueError(f"node {node.name!r} has no fl_out; quantize first")
            stats = {} if observer else None
            out = conv_ref(srcs[0], node.conv, blob,
                           out_fl=node.fl_out if fixed else None, stats=stats)
            if observer:
                observer(node.name, node, stats)
        elif node.kind == "maxpool":
            out = maxpool_ref(srcs[0], node.pool)
        elif node.kind == "concat":
            out = concat_ref(srcs)
        elif node.kind == "global_avgpool":
            out = global_avgpool_ref(srcs[0], out_fl=node.fl_out if fixed else None)
        elif node.kind == "softmax":
            out = softmax_ref(srcs[0])
        elif node.kind == "reshape":
            out = apply_rewrite(srcs[0], node.reshape)
        else:
            raise ValueError(f"unknown node kind {node.kind!r}")
        values[node.name] = out
    return values
