"""Network description: layer specs, the DAG, and the text config format.

One node per line, 15 whitespace-separated fields, '-' where a field does
not apply, '#' starts a comment:

    name kind inputs h w c k s p co relu fl_in fl_out fl_w fl_b

* kind: conv | maxpool | concat | global_avgpool | softmax | reshape
* inputs: comma-separated producer names; the graph input is the reserved
  name 'input'
* h w c: the node's input shape; required on nodes fed by 'input',
  elsewhere optional (checked against the inferred shape when given)
* k s p co: kernel/stride/pad and output channels (conv); kernel/stride/pad
  (maxpool); original kernel/stride/pad plus padded flat channels (reshape)
* relu: 0/1 (conv only)
* fl_*: fractional lengths of the int8 formats; '-' until quantized

Nodes must be defined before use, which also rules out cycles. A 'reshape'
node flattens each original-layer receptive field into one pixel, (kh, kw,
ci) order with ci innermost, zero-padded up to co channels; transforms emit
it in front of a reshaped first conv layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

KINDS = ("conv", "maxpool", "concat", "global_avgpool", "softmax", "reshape")

# Envelope the int64 kernel datapaths are proven overflow-free on; calibrated
# networks land well inside (see sqj2.quantizer).
MAX_ABS_FL = 32
MAX_BIAS_SHIFT = 48
OUT_SHIFT_RANGE = (-16, 48)


class NetworkError(Exception):
    pass


def conv_out_dim(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


@dataclass(frozen=True)
class PoolSpec:
    kernel: int
    stride: int
    pad: int

    def out_hw(self, h: int, w: int) -> Tuple[int, int]:
        return conv_out_dim(h, self.kernel, self.stride, self.pad), conv_out_dim(
            w, self.kernel, self.stride, self.pad
        )


@dataclass(frozen=True)
class ConvSpec:
    h_in: int
    w_in: int
    ch_in: int
    kernel: int
    stride: int
    pad: int
    ch_out: int
    use_relu: bool = False

    def __post_init__(self):
        if min(self.h_in, self.w_in, self.ch_in, self.kernel, self.stride, self.ch_out) < 1:
            raise NetworkError(f"conv dimensions must be positive: {self}")
        if self.pad < 0:
            raise NetworkError(f"pad must be non-negative: {self}")
        if self.h_out < 1 or self.w_out < 1:
            raise NetworkError(f"conv output collapses to zero: {self}")

    @property
    def h_out(self) -> int:
        return conv_out_dim(self.h_in, self.kernel, self.stride, self.pad)

    @property
    def w_out(self) -> int:
        return conv_out_dim(self.w_in, self.kernel, self.stride, self.pad)

    @property
    def out_shape(self) -> Tuple[int, int, int]:
        return (self.h_out, self.w_out, self.ch_out)


@dataclass(frozen=True)
class ReshapeSpec:
    """Receptive-field flattening of the original (kernel, stride, pad)."""

    kernel: int
    stride: int
    pad: int
    ch_out: int  # k*k*ci rounded up to the MAC-lane multiple


@dataclass
class LayerNode:
    name: str
    kind: str
    inputs: List[str]
    conv: Optional[ConvSpec] = None
    pool: Optional[PoolSpec] = None
    reshape: Optional[ReshapeSpec] = None
    fl_in: Optional[int] = None
    fl_out: Optional[int] = None
    fl_w: Optional[int] = None
    fl_b: Optional[int] = None
    # filled in by shape inference
    in_shape: Optional[Tuple[int, int, int]] = None
    out_shape: Optional[Tuple[int, int, int]] = None
    # (k, s, p, co, relu) parsed before the input shape is known
    raw_conv: Optional[Tuple[int, int, int, int, bool]] = None


@dataclass
class NetworkGraph:
    nodes: List[LayerNode] = field(default_factory=list)

    def __post_init__(self):
        self._infer()

    @property
    def by_name(self) -> Dict[str, LayerNode]:
        return {n.name: n for n in self.nodes}

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return self._input_shape

    @property
    def input_fl(self) -> Optional[int]:
        for n in self.nodes:
            if "input" in n.inputs and n.fl_in is not None:
                return n.fl_in
        return None

    def consumers(self, name: str) -> List[LayerNode]:
        return [n for n in self.nodes if name in n.inputs]

    @property
    def output_node(self) -> LayerNode:
        unconsumed = [n for n in self.nodes if not self.consumers(n.name)]
        if len(unconsumed) != 1:
            raise NetworkError(
                f"graph must have exactly one output, found {[n.name for n in unconsumed]}"
            )
        return unconsumed[0]

    def conv_nodes(self) -> List[LayerNode]:
        return [n for n in self.nodes if n.kind == "conv"]

    # -- shape and format inference -------------------------------------

    def _infer(self):
        shapes: Dict[str, Tuple[int, int, int]] = {}
        fls: Dict[str, Optional[int]] = {}
        input_shape = None
        seen = set()
        for node in self.nodes:
            if node.name in seen or node.name == "input":
                raise NetworkError(f"node {node.name!r}: duplicate or reserved name")
            seen.add(node.name)
            if node.kind not in KINDS:
                raise NetworkError(f"node {node.name!r}: unknown kind {node.kind!r}")
            if node.kind == "concat":
                if len(node.inputs) < 2:
                    raise NetworkError(f"node {node.name!r}: concat needs >= 2 inputs")
            elif len(node.inputs) != 1:
                raise NetworkError(f"node {node.name!r}: exactly one input required")
            in_shapes = []
            for src in node.inputs:
                if src == "input":
                    if node.in_shape is None:
                        raise NetworkError(
                            f"node {node.name!r}: nodes fed by 'input' must give h w c"
                        )
                    if input_shape is None:
                        input_shape = node.in_shape
                    elif input_shape != node.in_shape:
                        raise NetworkError(
                            f"node {node.name!r}: input shape {node.in_shape} "
                            f"disagrees with {input_shape}"
                        )
                    in_shapes.append(input_shape)
                elif src in shapes:
                    in_shapes.append(shapes[src])
                else:
                    raise NetworkError(f"node {node.name!r}: unknown input {src!r}")
            self._infer_node(node, in_shapes, fls)
            shapes[node.name] = node.out_shape
            fls[node.name] = node.fl_out
        if input_shape is None:
            raise NetworkError("no node consumes 'input'")
        self._input_shape = input_shape

    def _infer_node(self, node: LayerNode, in_shapes, fls):
        first = in_shapes[0]
        if node.in_shape is not None and node.in_shape != first and node.kind != "concat":
            raise NetworkError(
                f"node {node.name!r}: declared input shape {node.in_shape} "
                f"!= inferred {first}"
            )
        node.in_shape = first
        for fl in (node.fl_in, node.fl_out, node.fl_w, node.fl_b):
            if fl is not None and abs(fl) > MAX_ABS_FL:
                raise NetworkError(f"node {node.name!r}: |fl| > {MAX_ABS_FL}")
        # formats must agree along each edge once both sides declare one
        for src in node.inputs:
            if src == "input":
                continue
            up = fls.get(src)
            if up is not None and node.fl_in is not None and up != node.fl_in:
                raise NetworkError(
                    f"node {node.name!r}: fl_in {node.fl_in} != producer "
                    f"{src!r} fl_out {up}"
                )
            if node.fl_in is None:
                node.fl_in = up

        if node.kind == "conv":
            h, w, c = first
            try:
                if node.conv is None:
                    if node.raw_conv is None:
                        raise NetworkError("conv without k/s/p/co")
                    k, s, p, co, relu = node.raw_conv
                    node.conv = ConvSpec(h, w, c, k, s, p, co, use_relu=relu)
                elif (node.conv.h_in, node.conv.w_in, node.conv.ch_in) != (h, w, c):
                    node.conv = replace(node.conv, h_in=h, w_in=w, ch_in=c)
            except NetworkError as e:
                raise NetworkError(f"node {node.name!r}: {e}")
            node.out_shape = node.conv.out_shape
            if node.fl_in is not None and node.fl_w is not None:
                acc_fl = node.fl_in + node.fl_w
                if node.fl_b is not None and not 0 <= acc_fl - node.fl_b <= MAX_BIAS_SHIFT:
                    raise NetworkError(
                        f"node {node.name!r}: bias shift {acc_fl - node.fl_b} "
                        f"outside [0, {MAX_BIAS_SHIFT}]"
                    )
                if node.fl_out is not None:
                    lo, hi = OUT_SHIFT_RANGE
                    if not lo <= acc_fl - node.fl_out <= hi:
                        raise NetworkError(
                            f"node {node.name!r}: output shift {acc_fl - node.fl_out} "
                            f"outside [{lo}, {hi}]"
                        )
        elif node.kind == "maxpool":
            h, w, c = first
            if node.pool is None:
                raise NetworkError(f"node {node.name!r}: maxpool without k/s/p")
            ho, wo = node.pool.out_hw(h, w)
            if ho < 1 or wo < 1:
                raise NetworkError(f"node {node.name!r}: pool output collapses to zero")
            node.out_shape = (ho, wo, c)
            if node.fl_out is None:
                node.fl_out = node.fl_in
            elif node.fl_in is not None and node.fl_out != node.fl_in:
                raise NetworkError(f"node {node.name!r}: maxpool cannot change the format")
        elif node.kind == "concat":
            h, w, _ = first
            for s in in_shapes[1:]:
                if s[:2] != (h, w):
                    raise NetworkError(
                        f"node {node.name!r}: concat inputs disagree spatially: "
                        f"{in_shapes}"
                    )
            node.out_shape = (h, w, sum(s[2] for s in in_shapes))
            ups = {fls.get(s) for s in node.inputs if fls.get(s) is not None}
            if len(ups) > 1:
                raise NetworkError(f"node {node.name!r}: concat inputs have mixed formats {ups}")
            if node.fl_out is None:
                node.fl_out = node.fl_in
            elif node.fl_in is not None and node.fl_out != node.fl_in:
                raise NetworkError(f"node {node.name!r}: concat cannot change the format")
        elif node.kind == "global_avgpool":
            _, _, c = first
            node.out_shape = (1, 1, c)
        elif node.kind == "softmax":
            h, w, c = first
            if (h, w) != (1, 1):
                raise NetworkError(f"node {node.name!r}: softmax expects a 1x1xC map")
            node.out_shape = (1, 1, c)
        elif node.kind == "reshape":
            h, w, c = first
            spec = node.reshape
            if spec is None:
                raise NetworkError(f"node {node.name!r}: reshape without k/s/p/co")
            if spec.ch_out < spec.kernel * spec.kernel * c:
                raise NetworkError(
                    f"node {node.name!r}: padded channels {spec.ch_out} < "
                    f"k*k*ci = {spec.kernel * spec.kernel * c}"
                )
            ho = conv_out_dim(h, spec.kernel, spec.stride, spec.pad)
            wo = conv_out_dim(w, spec.kernel, spec.stride, spec.pad)
            if ho < 1 or wo < 1:
                raise NetworkError(f"node {node.name!r}: reshape output collapses to zero")
            node.out_shape = (ho, wo, spec.ch_out)
            if node.fl_out is None:
                node.fl_out = node.fl_in
            elif node.fl_in is not None and node.fl_out != node.fl_in:
                raise NetworkError(f"node {node.name!r}: reshape cannot change the format")


# ---------------------------------------------------------------------------
# text config parsing and emission
# ---------------------------------------------------------------------------


def _tok_int(tok: str, what: str, line_no: int) -> Optional[int]:
    if tok == "-":
        return None
    try:
        return int(tok)
    except ValueError:
        raise NetworkError(f"line {line_no}: {what} must be an integer or '-', got {tok!r}")


def _need(val: Optional[int], what: str, line_no: int) -> int:
    if val is None:
        raise NetworkError(f"line {line_no}: {what} is required here")
    return val


def load_network(text: str) -> NetworkGraph:
    nodes: List[LayerNode] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 15:
            raise NetworkError(f"line {line_no}: expected 15 fields, got {len(toks)}")
        name, kind, inputs_tok = toks[0], toks[1], toks[2]
        h, w, c, k, s, p, co, relu = (_tok_int(t, f, line_no) for t, f in zip(
            toks[3:11], ("h", "w", "c", "k", "s", "p", "co", "relu")))
        fl_in, fl_out, fl_w, fl_b = (_tok_int(t, "fl", line_no) for t in toks[11:15])
        inputs = inputs_tok.split(",")
        in_shape = (h, w, c) if h is not None and w is not None and c is not None else None
        node = LayerNode(name, kind, inputs, in_shape=in_shape,
                         fl_in=fl_in, fl_out=fl_out, fl_w=fl_w, fl_b=fl_b)
        if kind == "conv":
            node.raw_conv = (
                _need(k, "k", line_no), _need(s, "s", line_no),
                _need(p, "p", line_no), _need(co, "co", line_no),
                bool(_need(relu, "relu", line_no)),
            )
        elif kind == "maxpool":
            node.pool = PoolSpec(_need(k, "k", line_no), _need(s, "s", line_no),
                                 _need(p, "p", line_no))
        elif kind == "reshape":
            node.reshape = ReshapeSpec(_need(k, "k", line_no), _need(s, "s", line_no),
                                       _need(p, "p", line_no), _need(co, "co", line_no))
        nodes.append(node)
    return NetworkGraph(nodes)


def _fmt(v) -> str:
    return "-" if v is None else str(int(v))


def save_network(graph: NetworkGraph) -> str:
    lines = ["# name kind inputs h w c k s p co relu fl_in fl_out fl_w fl_b"]
    for n in graph.nodes:
        h = w = c = k = s = p = co = relu = None
        if "input" in n.inputs and n.in_shape is not None:
            h, w, c = n.in_shape
        if n.kind == "conv":
            k, s, p, co = n.conv.kernel, n.conv.stride, n.conv.pad, n.conv.ch_out
            relu = int(n.conv.use_relu)
        elif n.kind == "maxpool":
            k, s, p = n.pool.kernel, n.pool.stride, n.pool.pad
        elif n.kind == "reshape":
            k, s, p, co = n.reshape.kernel, n.reshape.stride, n.reshape.pad, n.reshape.ch_out
        fields = [n.name, n.kind, ",".join(n.inputs)] + [
            _fmt(v) for v in (h, w, c, k, s, p, co, relu, n.fl_in, n.fl_out, n.fl_w, n.fl_b)
        ]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def load_network_file(path) -> NetworkGraph:
    with open(path, "r") as f:
        return load_network(f.read())


def save_network_file(path, graph: NetworkGraph) -> None:
    with open(path, "w") as f:
        f.write(save_network(graph))
