"""Mapping a network onto accelerator invocations.

The planner decides, per graph node, what the accelerator actually runs:

* conv nodes become invocations; a conv whose banks would overflow is split
  into contiguous output-channel ranges (one invocation each, merged by
  channel concat, every sub-invocation re-reading the input stream)
* a maxpool that is the sole consumer of an unpartitioned conv fuses into
  that conv's invocation; the pooled rows ride the write-back stream and
  the conv intermediate never leaves the chip
* concat / global_avgpool / softmax / reshape stay on the host CPU, as does
  a maxpool the transforms could not place behind a conv

The fixed-point forward produced this way must match the reference forward
bit for bit; sqj2.check and the test suite hold it to that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..fmap import FeatureMap
from ..graph import NetworkGraph, LayerNode, PoolSpec
from ..params import ParamBlob
from ..reference import concat_ref, global_avgpool_ref, maxpool_ref, softmax_ref
from ..transforms import apply_rewrite, partition_output_channels
from .model import AccelConfig, AccelRunStats, ConvInvocation, WeightBanks, accel_conv


@dataclass
class PlanItem:
    """What one graph node turns into on the accelerator."""

    node: LayerNode
    kind: str                    # "accel" | "cpu" | "fused"
    invocations: List[ConvInvocation] = field(default_factory=list)
    blobs: Dict[str, ParamBlob] = field(default_factory=dict)  # by invocation name
    fused_pool_node: Optional[str] = None


def _fusable_pool(graph: NetworkGraph, conv: LayerNode) -> Optional[LayerNode]:
    consumers = graph.consumers(conv.name)
    if len(consumers) == 1 and consumers[0].kind == "maxpool":
        return consumers[0]
    return None


def plan_network(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                 config: AccelConfig) -> List[PlanItem]:
    """Turn a quantized graph into an executable plan.

    Every conv needs its formats and blob in place; run the quantizer first.
    """
    items: List[PlanItem] = []
    fused_pools = set()
    for node in graph.nodes:
        if node.kind == "conv":
            for fl_name in ("fl_in", "fl_out", "fl_w", "fl_b"):
                if getattr(node, fl_name) is None:
                    raise ValueError(f"node {node.name!r}: {fl_name} missing; quantize first")
            blob = blobs.get(node.name)
            if blob is None:
                raise ValueError(f"no parameter blob for conv node {node.name!r}")
            parts = partition_output_channels(node.conv, blob, config)
            pool_node = _fusable_pool(graph, node) if len(parts) == 1 else None
            invs, inv_blobs = [], {}
            for sub_spec, sub_blob, rng in parts:
                invs.append(ConvInvocation(
                    name=sub_blob.name, spec=sub_spec,
                    fl_in=node.fl_in, fl_out=node.fl_out,
                    fl_w=node.fl_w, fl_b=node.fl_b,
                    pool=pool_node.pool if pool_node is not None else None,
                    channel_range=rng if len(parts) > 1 else None,
                ))
                inv_blobs[sub_blob.name] = sub_blob
            for inv in invs:
                # partitioning only relieves the per-bank output-channel
                # pressure; anything still over a cache bound cannot map
                problems = inv.check_bounds(config)
                if problems:
                    raise ValueError(f"{inv.name}: " + "; ".join(problems))
            if pool_node is not None:
                fused_pools.add(pool_node.name)
            items.append(PlanItem(node, "accel", invs, inv_blobs,
                                  fused_pool_node=pool_node.name if pool_node else None))
        elif node.kind == "maxpool" and node.name in fused_pools:
            items.append(PlanItem(node, "fused"))
        else:
            items.append(PlanItem(node, "cpu"))
    return items


class _PoolConsumer:
    """Row-synchronous max pool riding on the conv write-back stream.

    Keeps a ring of the last pool_k padded conv rows and emits each pool row
    the moment its last contributing conv row retires, so the conv
    intermediate is never materialized off chip. Output equals
    maxpool_ref(conv output) code for code.
    """

    def __init__(self, conv_h_out: int, conv_w_out: int, ch: int, pool: PoolSpec):
        self.pool = pool
        self.h_in = conv_h_out
        self.w_in = conv_w_out
        self.h_out = (conv_h_out + 2 * pool.pad - pool.kernel) // pool.stride + 1
        self.w_out = (conv_w_out + 2 * pool.pad - pool.kernel) // pool.stride + 1
        if self.h_out < 1 or self.w_out < 1:
            raise ValueError("fused pool output collapses to zero")
        # -128 rail fill in the pad columns loses to any real code
        self.rows = np.full((pool.kernel, conv_w_out + 2 * pool.pad, ch),
                            -128, dtype=np.int8)
        self.next_in = 0
        self.next_out = 0
        self.out = np.zeros((self.h_out, self.w_out, ch), dtype=np.int8)

    def push_row(self, row: np.ndarray) -> None:
        k, p = self.pool.kernel, self.pool.pad
        self.rows[(self.next_in + p) % k, p:p + self.w_in] = row
        self.next_in += 1
        self._drain()

    def _drain(self) -> None:
        k, s, p = self.pool.kernel, self.pool.stride, self.pool.pad
        while self.next_out < self.h_out:
            last_needed = self.next_out * s + k - 1 - p  # conv row index
            if last_needed >= self.next_in and self.next_in < self.h_in:
                return
            self._emit(self.next_out)
            self.next_out += 1

    def _emit(self, po: int) -> None:
        k, s, p = self.pool.kernel, self.pool.stride, self.pool.pad
        strips = []
        for conv_row in range(po * s - p, po * s - p + k):
            if 0 <= conv_row < self.h_in:
                strips.append(self.rows[(conv_row + p) % k])
        strip = np.stack(strips).max(axis=0)  # pad < kernel: never empty
        for wo in range(self.w_out):
            self.out[po, wo] = strip[wo * s:wo * s + k].max(axis=0)

    def finish(self) -> np.ndarray:
        self._drain()
        if self.next_out != self.h_out:
            raise AssertionError("fused pool starved: conv retired too few rows")
        return self.out


def run_node_on_accel(item: PlanItem, fmap: FeatureMap, config: AccelConfig,
                      ) -> Tuple[FeatureMap, Optional[FeatureMap], AccelRunStats]:
    """Execute one planned conv node: all its invocations plus the fused pool.

    Returns (conv output, fused pool output or None, aggregated stats). The
    conv output is assembled even when a pool is fused; only the pooled map
    would leave the chip, but the intermediate is kept for bit-exact checks.
    """
    agg = AccelRunStats()
    outputs, pooled = [], None
    for idx, inv in enumerate(item.invocations):
        banks = WeightBanks(item.blobs[inv.name], config.par_fact)
        consumer = None
        if inv.pool is not None:
            consumer = _PoolConsumer(inv.spec.h_out, inv.spec.w_out,
                                     inv.spec.ch_out, inv.pool)
        out, stats = accel_conv(inv, fmap, banks, config, pool_consumer=consumer)
        outputs.append(out)
        if consumer is not None:
            pooled = FeatureMap(consumer.finish(), out.fmt)
        agg.rows_loaded.extend(stats.rows_loaded)
        agg.stream_pixels += stats.stream_pixels
        agg.output_writes += stats.output_writes
        if idx > 0:
            agg.hidden_reread_pixels += stats.stream_pixels
    conv_out = outputs[0] if len(outputs) == 1 else concat_ref(outputs)
    return conv_out, pooled, agg


def forward_accel(graph: NetworkGraph, blobs: Dict[str, ParamBlob], input_map: FeatureMap,
                  config: AccelConfig, stats_out: Optional[dict] = None,
                  ) -> Dict[str, FeatureMap]:
    """Fixed-point forward pass with convs (and fusable pools) on the
    emulated accelerator and everything else on the host."""
    if not input_map.is_fixed:
        raise ValueError("the accelerator engine runs int8 feature maps only")
    if input_map.shape != graph.input_shape:
        raise ValueError(f"input {input_map.shape} does not match graph "
                         f"{graph.input_shape}")
    plan = plan_network(graph, blobs, config)
    values: Dict[str, FeatureMap] = {"input": input_map}
    for item in plan:
        node = item.node
        srcs = [values[s] for s in node.inputs]
        if item.kind == "accel":
            conv_out, pooled, stats = run_node_on_accel(item, srcs[0], config)
            values[node.name] = conv_out
            if item.fused_pool_node is not None:
                values[item.fused_pool_node] = pooled
            if stats_out is not None:
                stats_out[node.name] = stats
        elif item.kind == "fused":
            assert node.name in values  # produced by the conv it fused into
        elif node.kind == "maxpool":
            values[node.name] = maxpool_ref(srcs[0], node.pool)
        elif node.kind == "concat":
            values[node.name] = concat_ref(srcs)
        elif node.kind == "global_avgpool":
            values[node.name] = global_avgpool_ref(srcs[0], out_fl=node.fl_out)
        elif node.kind == "softmax":
            values[node.name] = softmax_ref(srcs[0])
        elif node.kind == "reshape":
            values[node.name] = apply_rewrite(srcs[0], node.reshape)
        else:
            raise ValueError(f"cannot run node kind {node.kind!r}")
    return values
