"""Per-layer format search: turn a real-valued network into int8 codes.

Every tensor gets one fractional length for the whole map. The integer part
is sized to the largest magnitude the tensor takes during calibration, the
rest of the word is fraction:

    il = ceil(log2 max|x|)        (exact, via frexp, no float log)
    fl = word_len - 1 - il

Conv outputs are calibrated on the accumulator BEFORE the activation is
applied, because the datapath requantizes first and clamps negatives at the
output format's rail; the format has to carry the pre-activation range.

Tensors that must share a format are grouped before the search:

* concat inputs and its output are one group (channels interleave in one
  buffer; a per-branch format would need a per-channel shifter)
* maxpool and reshape outputs inherit their input's group (codes pass
  through untouched)
* a global average pool output is its own group; the division happens in
  wide arithmetic and lands directly in the output format

Weights and biases are per-layer, from their own extrema; the bias format
is clamped so the accumulator alignment shift stays a non-negative,
bounded left shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .fmap import FeatureMap
from .fxp import FxpFormat, quantize_array
from .graph import MAX_ABS_FL, MAX_BIAS_SHIFT, NetworkGraph
from .params import ParamBlob
from .reference import forward_ref

WORD_LEN = 8


def int_bits_for(max_abs: float) -> int:
    """Exact ceil(log2 max_abs) without floating log.

    frexp gives max_abs = m * 2**e with m in [0.5, 1); a power of two
    (m == 0.5) needs e - 1 bits, anything else needs e.
    """
    if max_abs < 0 or not math.isfinite(max_abs):
        raise ValueError(f"bad magnitude {max_abs!r}")
    if max_abs == 0.0:
        return 0  # all-zero tensor: no integer part, all fraction
    m, e = math.frexp(max_abs)
    return e - 1 if m == 0.5 else e


def choose_format(values, word_len: int = WORD_LEN) -> FxpFormat:
    """Format whose integer part just covers max|values|.

    A power-of-two maximum lands one code past the positive rail and clamps
    there by one LSB; the negative rail covers it exactly. Growing the
    integer part for that single code would cost every other value a bit.
    """
    arr = np.asarray(values, dtype=np.float64)
    max_abs = float(np.max(np.abs(arr))) if arr.size else 0.0
    return format_for_max_abs(max_abs, word_len)


def format_for_max_abs(max_abs: float, word_len: int = WORD_LEN) -> FxpFormat:
    fl = word_len - 1 - int_bits_for(max_abs)
    fl = max(-MAX_ABS_FL, min(MAX_ABS_FL, fl))
    return FxpFormat(fl, word_len)


# ---------------------------------------------------------------------------
# format groups
# ---------------------------------------------------------------------------


class _Groups:
    """Union-find over tensor names."""

    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, a: str) -> str:
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def groups(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for name in self.parent:
            out.setdefault(self.find(name), []).append(name)
        return out


def format_groups(graph: NetworkGraph) -> _Groups:
    """Tensors forced to one format by the graph structure.

    Tensor names are node names plus "input"; softmax produces reals and
    stays out.
    """
    g = _Groups()
    g.find("input")
    for node in graph.nodes:
        if node.kind == "softmax":
            continue
        g.find(node.name)
        if node.kind in ("maxpool", "reshape"):
            g.union(node.inputs[0], node.name)
        elif node.kind == "concat":
            for src in node.inputs:
                g.union(node.name, src)
    return g


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass
class QuantScheme:
    """Everything the fixed-point network needs: one fl per tensor and per
    parameter array."""

    activation_fl: Dict[str, int] = field(default_factory=dict)  # tensor name -> fl
    weight_fl: Dict[str, int] = field(default_factory=dict)      # conv name -> fl
    bias_fl: Dict[str, int] = field(default_factory=dict)        # conv name -> fl
    word_len: int = WORD_LEN
    max_abs: Dict[str, float] = field(default_factory=dict)      # calibration extrema

    def to_dict(self) -> dict:
        return {
            "word_len": self.word_len,
            "activation_fl": dict(sorted(self.activation_fl.items())),
            "weight_fl": dict(sorted(self.weight_fl.items())),
            "bias_fl": dict(sorted(self.bias_fl.items())),
        }


def calibrate_activations(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                          calib: Iterable[FeatureMap]) -> Dict[str, float]:
    """Largest magnitude each tensor (group-resolved later) reaches on the
    calibration set. Real-valued forward passes only."""
    extrema: Dict[str, float] = {"input": 0.0}
    pre_relu: Dict[str, float] = {}

    def observer(name, node, stats):
        hi = max(abs(stats["pre_relu_min"]), abs(stats["pre_relu_max"]))
        pre_relu[name] = max(pre_relu.get(name, 0.0), hi)

    n_runs = 0
    for fmap in calib:
        if fmap.is_fixed:
            raise ValueError("calibration inputs must be real-valued")
        n_runs += 1
        extrema["input"] = max(extrema["input"],
                               float(np.max(np.abs(fmap.data))) if fmap.data.size else 0.0)
        values = forward_ref(graph, blobs, fmap, observer=observer)
        for node in graph.nodes:
            if node.kind in ("conv", "softmax"):
                continue  # convs use pre-activation extrema; softmax stays real
            data = values[node.name].data
            hi = float(np.max(np.abs(data))) if data.size else 0.0
            extrema[node.name] = max(extrema.get(node.name, 0.0), hi)
    if n_runs == 0:
        raise ValueError("empty calibration set")
    extrema.update(pre_relu)
    return extrema


def _resolve_group_fls(graph: NetworkGraph, extrema: Dict[str, float],
                       word_len: int) -> Tuple[Dict[str, int], Dict[str, float]]:
    groups = format_groups(graph)
    group_max: Dict[str, float] = {}
    for name, hi in extrema.items():
        root = groups.find(name)
        group_max[root] = max(group_max.get(root, 0.0), hi)
    fls: Dict[str, int] = {}
    max_abs: Dict[str, float] = {}
    for root, members in groups.groups().items():
        fl = format_for_max_abs(group_max.get(root, 0.0), word_len).frac_len
        for m in members:
            fls[m] = fl
            max_abs[m] = group_max.get(root, 0.0)
    return fls, max_abs


def quantize_params(blobs: Dict[str, ParamBlob], fl_in: Dict[str, int],
                    word_len: int = WORD_LEN
                    ) -> Tuple[Dict[str, ParamBlob], Dict[str, int], Dict[str, int]]:
    """Per-layer weight and bias formats, then the codes themselves.

    The bias aligns to the accumulator by a left shift of
    fl_in + fl_w - fl_b, so fl_b is clamped into
    [fl_in + fl_w - MAX_BIAS_SHIFT, fl_in + fl_w].
    """
    fixed: Dict[str, ParamBlob] = {}
    w_fls: Dict[str, int] = {}
    b_fls: Dict[str, int] = {}
    for name, blob in blobs.items():
        if blob.is_fixed:
            raise ValueError(f"blob {name!r} is already quantized")
        if name not in fl_in:
            raise ValueError(f"no input format for layer {name!r}")
        w_fmt = choose_format(blob.weights, word_len)
        acc_fl = fl_in[name] + w_fmt.frac_len
        b_fmt = choose_format(blob.biases, word_len)
        b_fl = min(b_fmt.frac_len, acc_fl)
        b_fl = max(b_fl, acc_fl - MAX_BIAS_SHIFT)
        w = quantize_array(blob.weights, w_fmt)
        b = quantize_array(blob.biases, FxpFormat(b_fl, word_len))
        fixed[name] = ParamBlob(name, w, b, w_fmt.frac_len, b_fl)
        w_fls[name] = w_fmt.frac_len
        b_fls[name] = b_fl
    return fixed, w_fls, b_fls


def apply_scheme(graph: NetworkGraph, scheme: QuantScheme) -> NetworkGraph:
    """New graph with every node's formats filled in from the scheme."""
    from copy import deepcopy

    nodes = deepcopy(graph.nodes)
    for node in nodes:
        src = node.inputs[0]
        if node.kind == "softmax":
            node.fl_in = scheme.activation_fl[src]
            continue
        node.fl_in = scheme.activation_fl[src]
        node.fl_out = scheme.activation_fl[node.name]
        if node.kind == "conv":
            node.fl_w = scheme.weight_fl[node.name]
            node.fl_b = scheme.bias_fl[node.name]
        # shape inference rebuilds conv specs from scratch
        node.out_shape = None
        if node.conv is not None:
            node.raw_conv = (node.conv.kernel, node.conv.stride, node.conv.pad,
                             node.conv.ch_out, node.conv.use_relu)
            node.conv = None
    return NetworkGraph(nodes)


def quantize_network(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                     calib: Iterable[FeatureMap], word_len: int = WORD_LEN
                     ) -> Tuple[NetworkGraph, Dict[str, ParamBlob], QuantScheme]:
    """One-shot driver: calibrate, group, choose formats, quantize params.

    Returns the format-annotated graph, the int8 blobs, and the scheme.
    """
    extrema = calibrate_activations(graph, blobs, calib)
    act_fl, max_abs = _resolve_group_fls(graph, extrema, word_len)
    conv_in_fl = {n.name: act_fl[n.inputs[0]] for n in graph.conv_nodes()}
    fixed, w_fls, b_fls = quantize_params(blobs, conv_in_fl, word_len)
    scheme = QuantScheme(activation_fl=act_fl, weight_fl=w_fls, bias_fl=b_fls,
                         word_len=word_len, max_abs=max_abs)
    return apply_scheme(graph, scheme), fixed, scheme


def quantize_input(fmap: FeatureMap, fl: int, word_len: int = WORD_LEN) -> FeatureMap:
    """Real map -> codes in the network's input format."""
    if fmap.is_fixed:
        raise ValueError("map is already quantized")
    fmt = FxpFormat(fl, word_len)
    return FeatureMap(quantize_array(fmap.data, fmt), fmt)
