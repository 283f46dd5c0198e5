"""Randomized self-checks: the emulator, the transforms, and the cycle
model each get judged against their oracle on seeded random inputs.

Every check is deterministic for a given seed: report lines are stable
byte for byte, so diffs between runs mean real behavior changes. A fault
can be injected into the accelerator path (one weight code flipped) to
demonstrate the checks actually bite and to show which layer diverges.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from .accel.model import AccelConfig
from .accel.planner import forward_accel, plan_network
from .fmap import FeatureMap
from .graph import NetworkGraph
from .params import ParamBlob
from .perf import ModelParams, layer_latency, simulate_layer
from .quantizer import quantize_input
from .reference import forward_ref
from .transforms import transform_network


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    @property
    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}" + (f": {self.detail}" if self.detail else "")


def _random_fixed_input(graph: NetworkGraph, rng: np.random.Generator) -> FeatureMap:
    h, w, c = graph.input_shape
    fl = graph.input_fl
    if fl is None:
        raise ValueError("graph has no input format; quantize first")
    data = rng.uniform(-1.0, 1.0, size=(h, w, c)).astype(np.float32)
    return quantize_input(FeatureMap(data), fl)


def _first_mismatch(graph: NetworkGraph, ref: Dict[str, FeatureMap],
                    got: Dict[str, FeatureMap]) -> Optional[str]:
    for node in graph.nodes:
        a, b = ref[node.name], got[node.name]
        if a.shape != b.shape or not np.array_equal(a.data, b.data):
            return node.name
    return None


def _flip_weight(blob: ParamBlob) -> ParamBlob:
    w = blob.weights.copy()
    w.flat[0] = np.int8(int(w.flat[0]) ^ 0x5F)
    return ParamBlob(blob.name, w, blob.biases.copy(), blob.w_fl, blob.b_fl)


def check_engine_equivalence(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                             config: AccelConfig, trials: int,
                             rng: np.random.Generator,
                             fault_layer: Optional[str] = None) -> CheckResult:
    """accel must equal the fixed reference on every tensor, bit for bit."""
    accel_blobs = dict(blobs)
    if fault_layer is not None:
        if fault_layer not in accel_blobs:
            raise ValueError(f"no such conv layer {fault_layer!r} to fault")
        accel_blobs[fault_layer] = _flip_weight(accel_blobs[fault_layer])
    for t in range(trials):
        qin = _random_fixed_input(graph, rng)
        ref = forward_ref(graph, blobs, qin)
        got = forward_accel(graph, accel_blobs, qin, config)
        bad = _first_mismatch(graph, ref, got)
        if bad is not None:
            return CheckResult("engine-equivalence", False,
                               f"trial {t}: first mismatch at layer {bad}")
    return CheckResult("engine-equivalence", True, f"{trials} trials bit-exact")


def check_transform_preservation(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                                 config: AccelConfig, trials: int,
                                 rng: np.random.Generator) -> CheckResult:
    """Reshape/reorder/partition must not change the network function."""
    tgraph, tblobs, _ = transform_network(graph, blobs, config)
    out_name, tout_name = graph.output_node.name, tgraph.output_node.name
    for t in range(trials):
        qin = _random_fixed_input(graph, rng)
        want = forward_ref(graph, blobs, qin)[out_name]
        ref_t = forward_ref(tgraph, tblobs, qin)[tout_name]
        acc_t = forward_accel(tgraph, tblobs, qin, config)[tout_name]
        if not np.array_equal(want.data, ref_t.data):
            return CheckResult("transform-preservation", False,
                               f"trial {t}: transformed reference diverges")
        if not np.array_equal(want.data, acc_t.data):
            return CheckResult("transform-preservation", False,
                               f"trial {t}: transformed accel run diverges")
    return CheckResult("transform-preservation", True, f"{trials} trials bit-exact")


def _random_params(rng: np.random.Generator) -> ModelParams:
    draws = {name: int(rng.integers(0, 12))
             for name in ModelParams.__dataclass_fields__ if name != "ii"}
    return ModelParams(**draws)


def check_model_vs_sim(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                       config: AccelConfig, params: ModelParams,
                       rng: np.random.Generator, param_draws: int = 3) -> CheckResult:
    """Closed-form cycles must equal the event walk on every invocation."""
    tgraph, tblobs, _ = transform_network(graph, blobs, config)
    plan = plan_network(tgraph, tblobs, config)
    trials = [params] + [_random_params(rng) for _ in range(param_draws)]
    n = 0
    for p in trials:
        for item in plan:
            for inv in item.invocations:
                n += 1
                model = layer_latency(inv, config, p).cycles
                sim = simulate_layer(inv, config, p)
                if model != sim:
                    return CheckResult(
                        "model-vs-sim", False,
                        f"{inv.name}: model {model} != sim {sim} cycles")
    return CheckResult("model-vs-sim", True, f"{n} invocation evaluations exact")


def run_checks(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
               config: Optional[AccelConfig] = None,
               params: Optional[ModelParams] = None,
               trials: int = 5, seed: int = 0,
               fault_layer: Optional[str] = None) -> List[CheckResult]:
    """The full suite; deterministic for a given seed."""
    if config is None:
        config = AccelConfig()
    if params is None:
        params = ModelParams()
    rng = np.random.default_rng(seed)
    results = [
        check_engine_equivalence(graph, blobs, config, trials, rng, fault_layer),
        check_transform_preservation(graph, blobs, config, trials, rng),
        check_model_vs_sim(graph, blobs, config, params, rng),
    ]
    return results


def report_lines(results: List[CheckResult]) -> List[str]:
    lines = [r.line for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return lines
