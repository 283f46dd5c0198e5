"""Network rewrites that adapt a graph to the accelerator, value-preserving
bit for bit on the fixed-point datapath.

* first-layer reshape: a conv whose input has fewer channels than the MAC
  lanes wastes most of the compute array. Flattening each K x K receptive
  field into one pixel (channel-innermost (kh, kw, ci) order, zero-padded up
  to a lane multiple) turns it into a dense 1x1 conv over a reshaped input.
* pool reordering: max pooling commutes with channel concatenation, so a
  pool that follows a concat moves into the branches, where it can fuse with
  the producing convs.
* output-channel partitioning: a layer whose weights exceed the on-chip
  banks splits into contiguous, equal-as-possible channel ranges, one
  accelerator invocation each; channel concatenation merges the results.
"""

from __future__ import annotations

import warnings
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .fmap import FeatureMap
from .graph import ConvSpec, LayerNode, NetworkGraph, PoolSpec, ReshapeSpec, conv_out_dim
from .params import ParamBlob


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------------------
# first-layer reshape
# ---------------------------------------------------------------------------


def apply_rewrite(fmap: FeatureMap, rspec: ReshapeSpec) -> FeatureMap:
    """Flatten receptive fields into pixels; pure gather, dtype-agnostic."""
    h, w, c = fmap.shape
    k, s, p = rspec.kernel, rspec.stride, rspec.pad
    ho, wo = conv_out_dim(h, k, s, p), conv_out_dim(w, k, s, p)
    xp = np.zeros((h + 2 * p, w + 2 * p, c), dtype=fmap.data.dtype)
    xp[p:p + h, p:p + w] = fmap.data
    i0 = np.arange(ho) * s
    j0 = np.arange(wo) * s
    di = np.arange(k)
    win = xp[i0[:, None, None, None] + di[None, None, :, None],
             j0[None, :, None, None] + di[None, None, None, :], :]
    flat = win.reshape(ho, wo, k * k * c)
    out = np.zeros((ho, wo, rspec.ch_out), dtype=fmap.data.dtype)
    out[:, :, :k * k * c] = flat
    return FeatureMap(out, fmap.fmt)


def reshape_first_layer(spec: ConvSpec, blob: ParamBlob, chi_num: int):
    """Rewrite a thin-input conv as a 1x1 conv over flattened windows.

    Returns (new spec, new blob, input rewriter). A no-op (with a warning)
    when the input is already at least chi_num channels deep.
    """
    if spec.ch_in >= chi_num:
        warnings.warn(f"conv has ch_in={spec.ch_in} >= {chi_num}; reshape skipped")
        return spec, blob, lambda fmap: fmap
    flat = spec.kernel * spec.kernel * spec.ch_in
    ch_pad = _ceil_div(flat, chi_num) * chi_num
    new_spec = ConvSpec(spec.h_out, spec.w_out, ch_pad, 1, 1, 0, spec.ch_out,
                        use_relu=spec.use_relu)
    w = np.zeros((blob.co, 1, 1, ch_pad), dtype=blob.weights.dtype)
    w[:, 0, 0, :flat] = blob.weights.reshape(blob.co, flat)
    new_blob = ParamBlob(blob.name, w, blob.biases.copy(), blob.w_fl, blob.b_fl)
    rspec = ReshapeSpec(spec.kernel, spec.stride, spec.pad, ch_pad)
    return new_spec, new_blob, lambda fmap: apply_rewrite(fmap, rspec)


def _reshape_graph(graph: NetworkGraph, blobs: Dict[str, ParamBlob], chi_num: int,
                   log: List[str]) -> Tuple[NetworkGraph, Dict[str, ParamBlob]]:
    first = None
    for node in graph.nodes:
        if node.kind == "conv" and "input" in node.inputs:
            first = node
            break
    if first is None or first.conv.ch_in >= chi_num:
        return graph, blobs
    spec = first.conv
    blob = blobs.get(first.name)
    if blob is None:
        raise ValueError(f"no blob for first conv {first.name!r}")
    new_spec, new_blob, _ = reshape_first_layer(spec, blob, chi_num)
    rs_name = f"{first.name}_rf"
    rs_node = LayerNode(
        rs_name, "reshape", ["input"],
        reshape=ReshapeSpec(spec.kernel, spec.stride, spec.pad, new_spec.ch_in),
        fl_in=first.fl_in, fl_out=first.fl_in,
        in_shape=(spec.h_in, spec.w_in, spec.ch_in),
    )
    nodes = []
    for node in graph.nodes:
        if node is first:
            nodes.append(rs_node)
            nodes.append(LayerNode(first.name, "conv", [rs_name], conv=new_spec,
                                   fl_in=first.fl_in, fl_out=first.fl_out,
                                   fl_w=first.fl_w, fl_b=first.fl_b))
        else:
            nodes.append(replace_inputs(node, {}))
    new_blobs = dict(blobs)
    new_blobs[first.name] = new_blob
    log.append(
        f"reshape {first.name}: ({spec.h_in}x{spec.w_in}x{spec.ch_in}, "
        f"k{spec.kernel} s{spec.stride} p{spec.pad}) -> "
        f"({new_spec.h_in}x{new_spec.w_in}x{new_spec.ch_in}, k1 s1 p0), "
        f"{spec.kernel * spec.kernel * spec.ch_in} -> {new_spec.ch_in} channels"
    )
    return NetworkGraph(nodes), new_blobs


def replace_inputs(node: LayerNode, mapping: Dict[str, str]) -> LayerNode:
    """Shallow copy of a node with producer names remapped."""
    copy = LayerNode(node.name, node.kind, [mapping.get(i, i) for i in node.inputs],
                     conv=node.conv, pool=node.pool, reshape=node.reshape,
                     fl_in=node.fl_in, fl_out=node.fl_out, fl_w=node.fl_w, fl_b=node.fl_b,
                     in_shape=node.in_shape, raw_conv=node.raw_conv)
    return copy


# ---------------------------------------------------------------------------
# pool reordering
# ---------------------------------------------------------------------------


def reorder_maxpool_before_concat(graph: NetworkGraph,
                                  log: Optional[List[str]] = None) -> NetworkGraph:
    """Rewrite every pool-after-concat as concat-of-pooled-branches.

    The rewritten concat takes over the pool's name, so downstream consumers
    need no rewiring. A graph without the pattern comes back equivalent.
    """
    log = log if log is not None else []
    nodes: List[LayerNode] = []
    by_name = graph.by_name
    changed = False
    for node in graph.nodes:
        if node.kind == "maxpool" and by_name[node.inputs[0]].kind == "concat":
            cat = by_name[node.inputs[0]]
            branch_pools = []
            for i, branch in enumerate(cat.inputs):
                pname = f"{node.name}_{i}"
                nodes.append(LayerNode(pname, "maxpool", [branch], pool=node.pool,
                                       fl_in=None, fl_out=None))
                branch_pools.append(pname)
            nodes.append(LayerNode(node.name, "concat", branch_pools,
                                   fl_in=node.fl_in, fl_out=node.fl_out))
            log.append(f"reorder {node.name}: pool(concat{tuple(cat.inputs)}) -> "
                       f"concat of pooled branches")
            changed = True
        else:
            nodes.append(replace_inputs(node, {}))
    if not changed:
        return graph
    # drop concats left with no consumers by the rewrite
    result = NetworkGraph(nodes)
    dead = [n.name for n in result.nodes
            if n.kind == "concat" and not result.consumers(n.name)
            and n is not result.nodes[-1]]
    if dead:
        result = NetworkGraph([replace_inputs(n, {}) for n in result.nodes
                               if n.name not in dead])
    return result


# ---------------------------------------------------------------------------
# output-channel partitioning
# ---------------------------------------------------------------------------


def plan_channel_partition(ch_out: int, kkci: int, config) -> List[Tuple[int, int]]:
    """Contiguous, equal-as-possible channel ranges, fewest that fit the banks.

    Raises when no channel split can help (the per-channel footprint itself
    exceeds a bank or the window bound).
    """
    if kkci > config.kxkxchi_max:
        raise ValueError(f"k*k*ci = {kkci} exceeds the window bound {config.kxkxchi_max}; "
                         "channel partitioning cannot reduce it")
    if kkci > config.q_choxkxkxchi_max:
        raise ValueError(f"one output channel needs {kkci} weight codes per bank, "
                         f"more than the bank holds ({config.q_choxkxkxchi_max})")
    for n in range(1, ch_out + 1):
        big = _ceil_div(ch_out, n)
        q = _ceil_div(big, config.par_fact)
        if (q * kkci <= config.q_choxkxkxchi_max and big <= config.cho_max
                and q <= config.q_cho_max):
            base, extra = divmod(ch_out, n)
            ranges = []
            start = 0
            for i in range(n):
                size = base + (1 if i < extra else 0)
                ranges.append((start, start + size))
                start += size
            return ranges
    raise ValueError(f"cannot partition {ch_out} channels to fit the banks")


def partition_output_channels(spec: ConvSpec, blob: ParamBlob, config):
    """Split a conv into bank-sized sub-convs over contiguous channel ranges.

    Returns a list of (spec, blob, (c0, c1)); concatenating the outputs in
    range order reproduces the unpartitioned layer exactly. A layer that
    already fits comes back as a single range.
    """
    kkci = spec.kernel * spec.kernel * spec.ch_in
    ranges = plan_channel_partition(spec.ch_out, kkci, config)
    parts = []
    for idx, (c0, c1) in enumerate(ranges):
        sub_spec = replace(spec, ch_out=c1 - c0)
        name = blob.name if len(ranges) == 1 else f"{blob.name}@{c0}:{c1}"
        sub_blob = ParamBlob(name, blob.weights[c0:c1].copy(), blob.biases[c0:c1].copy(),
                             blob.w_fl, blob.b_fl)
        parts.append((sub_spec, sub_blob, (c0, c1)))
    return parts


# ---------------------------------------------------------------------------
# the whole pipeline
# ---------------------------------------------------------------------------


def transform_network(graph: NetworkGraph, blobs: Dict[str, ParamBlob], config):
    """First-layer reshape + pool reordering + partition planning.

    Partitioning itself happens at invocation-planning time (it changes the
    execution plan, not the network); here it is only logged.
    """
    log: List[str] = []
    graph, blobs = _reshape_graph(graph, blobs, config.chi_num, log)
    graph = reorder_maxpool_before_concat(graph, log)
    for node in graph.conv_nodes():
        spec = node.conv
        kkci = spec.kernel * spec.kernel * spec.ch_in
        ranges = plan_channel_partition(spec.ch_out, kkci, config)
        if len(ranges) > 1:
            sizes = "+".join(str(c1 - c0) for c0, c1 in ranges)
            log.append(f"partition {node.name}: {spec.ch_out} channels -> "
                       f"{len(ranges)} invocations of {sizes}")
    return graph, blobs, log
