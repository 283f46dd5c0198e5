"""Design-space sweep: configurations in, feasible Pareto points out.

Each grid point fixes some AccelConfig fields (typically par_fact and
chi_num). The networks are re-transformed under that point (the first-layer
reshape depends on chi_num), the cache bounds shrink-wrap onto what the
transformed layers need (unless the grid pins them), and the point is
costed by the resource estimator and the cycle model. A point that cannot
map the networks at all is kept, marked infeasible, with the reason.

Pareto dominance is judged on (cycles, dsp, bram, lut_macs), all minimized,
among feasible points. Evaluation order is the sorted grid, so output is
deterministic and points may be evaluated in parallel and merged.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .accel.model import AccelConfig
from .graph import NetworkError, NetworkGraph
from .params import ParamBlob
from .perf import ModelParams, network_latency
from .resources import BUDGETS, DeviceBudget, ResourceEstimate, autosize_config, estimate_resources
from .transforms import transform_network

Network = Tuple[NetworkGraph, Dict[str, ParamBlob]]

SWEEPABLE = ("par_fact", "chi_num", "dsp_share", "k_max", "wi_x_chi_max",
             "kxkxchi_max", "q_choxkxkxchi_max", "q_cho_max", "cho_max")


@dataclass
class DsePoint:
    config: AccelConfig
    estimate: Optional[ResourceEstimate]
    cycles: Optional[int]
    feasible: bool
    dominated: bool = False
    note: str = ""

    def objectives(self) -> Tuple[int, int, int, int]:
        return (self.cycles, self.estimate.dsp_macs,
                self.estimate.bram_total, self.estimate.lut_macs)


@dataclass
class DseResult:
    points: List[DsePoint] = field(default_factory=list)

    @property
    def feasible_points(self) -> List[DsePoint]:
        return [p for p in self.points if p.feasible]

    @property
    def front(self) -> List[DsePoint]:
        return [p for p in self.feasible_points if not p.dominated]


def _dominates(a: Sequence[int], b: Sequence[int]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def mark_dominated(points: List[DsePoint]) -> None:
    feas = [p for p in points if p.feasible]
    for p in feas:
        p.dominated = any(_dominates(q.objectives(), p.objectives())
                          for q in feas if q is not p)


def grid_points(grid: Dict[str, Sequence]) -> List[Dict[str, object]]:
    """Cartesian product of the grid, in sorted key and value order."""
    if not grid:
        raise ValueError("empty search grid")
    for key in grid:
        if key not in SWEEPABLE:
            raise ValueError(f"cannot sweep {key!r}; one of {SWEEPABLE}")
        if not grid[key]:
            raise ValueError(f"no values for {key!r}")
    keys = sorted(grid)
    combos = itertools.product(*(sorted(set(grid[k])) for k in keys))
    return [dict(zip(keys, c)) for c in combos]


def evaluate_point(networks: Sequence[Network], combo: Dict[str, object],
                   base: AccelConfig, budget: DeviceBudget,
                   params: ModelParams, clock_mhz: float) -> DsePoint:
    cfg = replace(base, **combo)
    try:
        transformed = [transform_network(g, b, cfg)[:2] for g, b in networks]
        cfg = autosize_config(cfg, [g for g, _ in transformed], keep=combo)
        est = estimate_resources(cfg, budget)
        cycles = sum(network_latency(g, b, cfg, params, clock_mhz).total_cycles
                     for g, b in transformed)
    except (ValueError, NetworkError) as e:
        return DsePoint(cfg, None, None, feasible=False, note=str(e))
    note = "" if est.feasible else "; ".join(est.violations())
    return DsePoint(cfg, est, cycles, feasible=est.feasible, note=note)


def dse(networks: Sequence[Network], grid: Dict[str, Sequence],
        budget: Optional[DeviceBudget] = None,
        params: Optional[ModelParams] = None,
        base_config: Optional[AccelConfig] = None,
        clock_mhz: float = 100.0) -> DseResult:
    """Sweep the grid over the networks and mark the Pareto front."""
    if budget is None:
        budget = BUDGETS["xc7z020"]
    if params is None:
        params = ModelParams()
    if base_config is None:
        base_config = AccelConfig()
    if not networks:
        raise ValueError("need at least one network to explore against")
    result = DseResult()
    for combo in grid_points(grid):
        result.points.append(evaluate_point(networks, combo, base_config,
                                            budget, params, clock_mhz))
    mark_dominated(result.points)
    return result
