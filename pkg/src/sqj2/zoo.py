"""Built-in network topologies and random parameter generation.

Two desk-scale demo networks ship for out-of-the-box runs: a three-fire
mini-SqueezeNet (conv -> pool -> fire stack with a pool after a merge, so
the pool-reorder transform has work to do) and a mini-ZynqNet that
downsamples with stride-2 convolutions and has no pooling at all. Full-size
builders for SqueezeNet v1.1 and a ZynqNet-style all-conv network are
provided as recipes; their parameters are generated, not trained, so they
exercise shapes and schedules, not accuracy.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .graph import LayerNode, NetworkGraph, PoolSpec
from .params import ParamBlob

ZOO = ("mini-squeezenet", "mini-zynqnet", "squeezenet-v1.1", "zynqnet-like")


def _conv(name: str, src: str, k: int, s: int, p: int, co: int,
          relu: bool = True, in_shape: Optional[Tuple[int, int, int]] = None) -> LayerNode:
    return LayerNode(name, "conv", [src], in_shape=in_shape,
                     raw_conv=(k, s, p, co, relu))


def _pool(name: str, src: str, k: int, s: int, p: int) -> LayerNode:
    return LayerNode(name, "maxpool", [src], pool=PoolSpec(k, s, p))


def _fire(nodes: List[LayerNode], name: str, src: str, squeeze: int,
          expand: int) -> str:
    """squeeze 1x1 -> parallel 1x1 / 3x3 expands -> channel merge."""
    nodes.append(_conv(f"{name}_squeeze", src, 1, 1, 0, squeeze))
    nodes.append(_conv(f"{name}_e1", f"{name}_squeeze", 1, 1, 0, expand))
    nodes.append(_conv(f"{name}_e3", f"{name}_squeeze", 3, 1, 1, expand))
    nodes.append(LayerNode(f"{name}_cat", "concat", [f"{name}_e1", f"{name}_e3"]))
    return f"{name}_cat"


def build_mini_squeezenet() -> NetworkGraph:
    """32x32x3 -> 10 classes; three fires, pools both right after a conv and
    right after a merge."""
    nodes: List[LayerNode] = []
    nodes.append(_conv("conv1", "input", 3, 2, 0, 16, in_shape=(32, 32, 3)))
    nodes.append(_pool("pool1", "conv1", 3, 2, 0))
    top = _fire(nodes, "f1", "pool1", 8, 16)
    top = _fire(nodes, "f2", top, 8, 16)
    nodes.append(_pool("pool2", top, 3, 2, 0))
    top = _fire(nodes, "f3", "pool2", 8, 16)
    nodes.append(_conv("conv_last", top, 1, 1, 0, 10, relu=False))
    nodes.append(LayerNode("gap", "global_avgpool", ["conv_last"]))
    nodes.append(LayerNode("prob", "softmax", ["gap"]))
    return NetworkGraph(nodes)


def build_mini_zynqnet() -> NetworkGraph:
    """32x32x3 -> 10 classes; stride-2 convs do all downsampling, no pools."""
    nodes: List[LayerNode] = []
    nodes.append(_conv("conv1", "input", 3, 2, 1, 16, in_shape=(32, 32, 3)))
    top = _fire(nodes, "f1", "conv1", 8, 16)
    nodes.append(_conv("down1", top, 3, 2, 1, 32))
    top = _fire(nodes, "f2", "down1", 16, 32)
    nodes.append(_conv("down2", top, 3, 2, 1, 64))
    nodes.append(_conv("conv_last", "down2", 1, 1, 0, 10, relu=False))
    nodes.append(LayerNode("gap", "global_avgpool", ["conv_last"]))
    nodes.append(LayerNode("prob", "softmax", ["gap"]))
    return NetworkGraph(nodes)


def build_squeezenet_v11() -> NetworkGraph:
    """The full 227x227x3 -> 1000 topology, fires at v1.1 widths."""
    nodes: List[LayerNode] = []
    nodes.append(_conv("conv1", "input", 3, 2, 0, 64, in_shape=(227, 227, 3)))
    nodes.append(_pool("pool1", "conv1", 3, 2, 0))
    top = _fire(nodes, "fire2", "pool1", 16, 64)
    top = _fire(nodes, "fire3", top, 16, 64)
    nodes.append(_pool("pool3", top, 3, 2, 0))
    top = _fire(nodes, "fire4", "pool3", 32, 128)
    top = _fire(nodes, "fire5", top, 32, 128)
    nodes.append(_pool("pool5", top, 3, 2, 0))
    top = _fire(nodes, "fire6", "pool5", 48, 192)
    top = _fire(nodes, "fire7", top, 48, 192)
    top = _fire(nodes, "fire8", top, 64, 256)
    top = _fire(nodes, "fire9", top, 64, 256)
    nodes.append(_conv("conv10", top, 1, 1, 0, 1000))
    nodes.append(LayerNode("gap", "global_avgpool", ["conv10"]))
    nodes.append(LayerNode("prob", "softmax", ["gap"]))
    return NetworkGraph(nodes)


def build_zynqnet_like() -> NetworkGraph:
    """All-conv 128x128x3 -> 10 recipe in the spirit of stride-2 fire CNNs.

    Widths are scaled far below the original (which targets a much larger
    device); the topology pattern — no pools, stride-2 3x3 between fires,
    global average pooling head — is what matters here.
    """
    nodes: List[LayerNode] = []
    nodes.append(_conv("conv1", "input", 3, 2, 1, 16, in_shape=(128, 128, 3)))
    top = _fire(nodes, "f1", "conv1", 8, 16)
    nodes.append(_conv("down1", top, 3, 2, 1, 32))
    top = _fire(nodes, "f2", "down1", 16, 32)
    nodes.append(_conv("down2", top, 3, 2, 1, 64))
    top = _fire(nodes, "f3", "down2", 24, 48)
    nodes.append(_conv("down3", top, 3, 2, 1, 96))
    nodes.append(_conv("conv_last", "down3", 1, 1, 0, 10, relu=False))
    nodes.append(LayerNode("gap", "global_avgpool", ["conv_last"]))
    nodes.append(LayerNode("prob", "softmax", ["gap"]))
    return NetworkGraph(nodes)


_BUILDERS = {
    "mini-squeezenet": build_mini_squeezenet,
    "mini-zynqnet": build_mini_zynqnet,
    "squeezenet-v1.1": build_squeezenet_v11,
    "zynqnet-like": build_zynqnet_like,
}


def build(name: str) -> NetworkGraph:
    if name not in _BUILDERS:
        raise ValueError(f"unknown network {name!r}; available: {', '.join(ZOO)}")
    return _BUILDERS[name]()


def random_real_params(graph: NetworkGraph, seed: int = 0,
                       weight_scale: float = 1.0) -> Dict[str, ParamBlob]:
    """Variance-scaled gaussian weights per conv layer, small biases.

    Fan-in scaling keeps accumulator magnitudes comparable across layers so
    8-bit formats stay informative on random data.
    """
    rng = np.random.default_rng(seed)
    blobs: Dict[str, ParamBlob] = {}
    for node in graph.conv_nodes():
        s = node.conv
        fan_in = s.kernel * s.kernel * s.ch_in
        sigma = weight_scale * np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, sigma, size=(s.ch_out, s.kernel, s.kernel, s.ch_in))
        b = rng.normal(0.0, 0.05, size=(s.ch_out,))
        blobs[node.name] = ParamBlob(node.name, w.astype(np.float32),
                                     b.astype(np.float32))
    return blobs


def random_input(graph: NetworkGraph, seed: int = 0, scale: float = 1.0):
    """One random real-valued input map matching the graph."""
    from .fmap import FeatureMap

    rng = np.random.default_rng(seed)
    h, w, c = graph.input_shape
    data = rng.uniform(-scale, scale, size=(h, w, c)).astype(np.float32)
    return FeatureMap(data)
