"""Cycle model of the accelerator: closed form plus an event-walk oracle.

The only tripcount-scaled term is the per-pixel compute loop: one output
pixel costs ceil(CHO/par_fact) * K*K * ceil(CHI/chi_num) pipelined MAC
iterations (every PE finishing its channel slots), plus the pipeline fill
and the call overhead. Data movement (row shifting, window priming, window
update, write back) runs concurrently with compute inside the per-pixel
dataflow region, so each of those stages enters as a constant cost and the
region costs the maximum of the three overlapped stages; their internal
tripcounts are hidden behind the MAC loop on any layer worth running.

Composition per invocation, mirroring the schedule in sqj2.accel.model:

    invocation_over + precalc_cc + init_caches_cc * n_param_codes
    + sum over output rows of
        [ shift + init_win + w_out * (max(cco, update, write_back) + df_over)
          + write_back ]                      (the leftover flush)

Every constant lives in ModelParams so the model can be recalibrated
against hardware measurements without touching code. simulate_layer walks
the same schedule event by event and must agree with layer_latency to the
cycle; the test suite enforces that on randomized draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .accel.model import AccelConfig, ConvInvocation
from .accel.planner import PlanItem, plan_network
from .graph import NetworkGraph
from .params import ParamBlob


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class ModelParams:
    """Pipeline constants of one accelerator build.

    Iteration latencies are the additive pipeline-depth terms; *_over are
    per-call argument-read overheads. Defaults are plausible shallow-pipeline
    values; they are calibration knobs, not measurements.
    """

    ii: int = 1                    # initiation interval, all pipelined loops
    pipe_cco_fill: int = 6         # compute pipeline fill latency
    cco_over: int = 2              # compute call overhead
    shift_iter_lat: int = 3        # row rotate + prime, per output row
    shift_over: int = 1
    init_win_iter_lat: int = 3     # window seed, per output row
    init_win_over: int = 1
    update_win_iter_lat: int = 4   # window reload stage, per pixel
    update_win_over: int = 1
    write_back_iter_lat: int = 2   # output write stage, per pixel
    write_back_over: int = 1
    df_over: int = 2               # dataflow region handoff, per pixel
    precalc_cc: int = 20           # per-invocation bound precomputation
    init_caches_cc: int = 1        # parameter load, per weight/bias code
    invocation_over: int = 100     # call setup (driver/DMA stand-in)

    def __post_init__(self):
        if self.ii != 1:
            raise ValueError("the design pipelines every loop at ii = 1")
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "ModelParams":
        return ModelParams(**d)

    @staticmethod
    def zeros() -> "ModelParams":
        return ModelParams(**{k: 0 for k in ModelParams.__dataclass_fields__
                              if k != "ii"})


def loop_cc(tripcount: int, ii: int, iteration_latency: int) -> int:
    """Cycles of one pipelined loop: issue an iteration every ii cycles,
    then drain the pipeline."""
    if tripcount < 0:
        raise ValueError("tripcount must be >= 0")
    return tripcount * ii + iteration_latency


def cco_cc(cho: int, k: int, chi: int, par_fact: int, chi_num: int,
           fill: int, over: int) -> int:
    """One output pixel's compute cost.

    Each of the par_fact PEs walks its ceil(cho/par_fact) channel slots over
    the K*K window, consuming chi_num input channels per cycle; ceil keeps
    the count exact when the dims do not divide.
    """
    if min(cho, k, chi, par_fact, chi_num) < 1:
        raise ValueError("dims must be positive")
    trip = _ceil_div(cho, par_fact) * k * k * _ceil_div(chi, chi_num)
    return loop_cc(trip, 1, fill) + over


@dataclass
class InvocationCycles:
    name: str
    cycles: int
    parts: Dict[str, int]
    compute_cycles: int  # what the MAC array alone demands, all pixels


@dataclass
class LayerCycles:
    name: str
    kind: str  # accel | cpu | fused
    invocations: List[InvocationCycles] = field(default_factory=list)

    @property
    def cycles(self) -> int:
        return sum(i.cycles for i in self.invocations)


@dataclass
class CycleReport:
    layers: List[LayerCycles]
    clock_mhz: float

    @property
    def total_cycles(self) -> int:
        return sum(l.cycles for l in self.layers)

    @property
    def ms(self) -> float:
        return cycles_to_ms(self.total_cycles, self.clock_mhz)

    @property
    def fps(self) -> float:
        return ms_to_fps(self.ms)

    def part_total(self, part: str) -> int:
        return sum(inv.parts.get(part, 0)
                   for l in self.layers for inv in l.invocations)


def cycles_to_ms(cycles: int, clock_mhz: float) -> float:
    if clock_mhz <= 0:
        raise ValueError("clock must be positive")
    return cycles / (clock_mhz * 1000.0)


def ms_to_fps(ms: float) -> float:
    if ms <= 0:
        raise ValueError("latency must be positive")
    return 1000.0 / ms


def _stage_costs(inv: ConvInvocation, config: AccelConfig,
                 params: ModelParams) -> Tuple[int, int, int]:
    s = inv.spec
    cco = cco_cc(s.ch_out, s.kernel, s.ch_in, config.par_fact, config.chi_num,
                 params.pipe_cco_fill, params.cco_over)
    upd = params.update_win_iter_lat + params.update_win_over
    wb = params.write_back_iter_lat + params.write_back_over
    return cco, upd, wb


def layer_latency(inv: ConvInvocation, config: AccelConfig,
                  params: ModelParams) -> InvocationCycles:
    """Closed-form cycles of one invocation, with a reconciling breakdown."""
    s = inv.spec
    cco, upd, wb = _stage_costs(inv, config, params)
    pixel = max(cco, upd, wb) + params.df_over
    shift = params.shift_iter_lat + params.shift_over
    init_win = params.init_win_iter_lat + params.init_win_over
    parts = {
        "invocation_over": params.invocation_over,
        "precalc": params.precalc_cc,
        "param_load": params.init_caches_cc * inv.n_param_codes(),
        "row_setup": s.h_out * (shift + init_win),
        "pixel_loop": s.h_out * s.w_out * pixel,
        "row_flush": s.h_out * wb,
    }
    compute = s.h_out * s.w_out * cco
    return InvocationCycles(inv.name, sum(parts.values()), parts, compute)


def simulate_layer(inv: ConvInvocation, config: AccelConfig,
                   params: ModelParams) -> int:
    """Event walk of the schedule; the oracle layer_latency must match.

    Walks rows and pixels one by one: sequential stages advance the clock,
    the three overlapped per-pixel stages all start together and the region
    retires when the slowest finishes.
    """
    s = inv.spec
    t = params.invocation_over + params.precalc_cc
    for _ in range(inv.n_param_codes()):
        t += params.init_caches_cc
    # pipelined compute cost, stepped iteration by iteration
    cc = 0
    for _ in range(_ceil_div(s.ch_out, config.par_fact)):
        for _ in range(s.kernel * s.kernel):
            for _ in range(_ceil_div(s.ch_in, config.chi_num)):
                cc += params.ii
    cco = cc + params.pipe_cco_fill + params.cco_over
    upd = params.update_win_iter_lat + params.update_win_over
    wb = params.write_back_iter_lat + params.write_back_over
    for _ in range(s.h_out):
        t += params.shift_iter_lat + params.shift_over
        t += params.init_win_iter_lat + params.init_win_over
        for _ in range(s.w_out):
            t = max(t + cco, t + upd, t + wb) + params.df_over
        t += wb
    return t


def network_latency(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                    config: AccelConfig, params: ModelParams,
                    clock_mhz: float = 100.0,
                    plan: Optional[List[PlanItem]] = None) -> CycleReport:
    """Whole-network cycles: accelerator invocations summed, pools fused
    into their conv for free, host-side nodes listed at zero cycles."""
    if plan is None:
        plan = plan_network(graph, blobs, config)
    layers = []
    for item in plan:
        if item.kind == "accel":
            invs = [layer_latency(inv, config, params) for inv in item.invocations]
            layers.append(LayerCycles(item.node.name, "accel", invs))
        else:
            layers.append(LayerCycles(item.node.name, item.kind))
    return CycleReport(layers, clock_mhz)


def simulate_network(graph: NetworkGraph, blobs: Dict[str, ParamBlob],
                     config: AccelConfig, params: ModelParams,
                     plan: Optional[List[PlanItem]] = None) -> Dict[str, int]:
    """Per-layer event-simulated cycles, same plan as network_latency."""
    if plan is None:
        plan = plan_network(graph, blobs, config)
    out: Dict[str, int] = {}
    for item in plan:
        if item.kind == "accel":
            out[item.node.name] = sum(simulate_layer(inv, config, params)
                                      for inv in item.invocations)
        else:
            out[item.node.name] = 0
    return out
