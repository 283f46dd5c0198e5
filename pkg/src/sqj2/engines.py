"""Uniform entry point over the three execution engines.

ref-float runs the real-valued reference, ref-fixed the int8 reference
arithmetic, and accel the full cache-and-schedule emulation. ref-fixed and
accel must agree bit for bit; ref-float is the numerical baseline the
quantization is judged against.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .accel.model import AccelConfig
from .accel.planner import forward_accel
from .fmap import FeatureMap
from .graph import NetworkGraph
from .params import ParamBlob
from .quantizer import quantize_input
from .reference import forward_ref

ENGINES = ("ref-float", "ref-fixed", "accel")


def run_forward(engine: str, graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                input_map: FeatureMap, config: Optional[AccelConfig] = None,
                stats_out: Optional[dict] = None) -> Dict[str, FeatureMap]:
    """Name -> feature map for every node, computed by the chosen engine."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; one of {ENGINES}")
    fixed_blobs = all(b.is_fixed for b in blobs.values())
    if engine == "ref-float":
        if fixed_blobs and blobs:
            raise ValueError("ref-float needs real-valued parameters")
        if input_map.is_fixed:
            raise ValueError("ref-float needs a real-valued input tensor")
        return forward_ref(graph, blobs, input_map)
    if blobs and not fixed_blobs:
        raise ValueError(f"{engine} needs quantized parameters")
    if not input_map.is_fixed:
        fl = graph.input_fl
        if fl is None:
            raise ValueError("graph has no input format; quantize first")
        input_map = quantize_input(input_map, fl)
    if engine == "ref-fixed":
        return forward_ref(graph, blobs, input_map)
    return forward_accel(graph, blobs, input_map,
                         config if config is not None else AccelConfig(),
                         stats_out=stats_out)


def network_output(graph: NetworkGraph, values: Dict[str, FeatureMap]) -> FeatureMap:
    return values[graph.output_node.name]


def top_k(fmap: FeatureMap, k: int = 5) -> List[Tuple[int, float]]:
    """(channel, value) of the k largest entries of a 1x1xC map."""
    if (fmap.h, fmap.w) != (1, 1):
        raise ValueError("top-k expects a 1x1xC map")
    vals = fmap.to_real().data.reshape(-1)
    order = np.argsort(-vals, kind="stable")[:k]
    return [(int(i), float(vals[i])) for i in order]
