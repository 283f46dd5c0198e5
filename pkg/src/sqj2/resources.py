"""FPGA resource estimate for one accelerator configuration.

The estimate covers what scales with the configuration: the MAC array
(split between DSP blocks and LUT fabric by dsp_share) and the block-RAM
backing the weight banks, bias banks, and line-buffer rows. Control logic,
AXI plumbing, and the HLS scheduler's registers are left out, so the
estimate brackets a real implementation from below; budgets still catch
the configurations that cannot fit.

BRAM is counted in 36Kb blocks by byte capacity (4608 bytes per block),
one bank at a time since each is independently addressed; the count is
accurate to about one block per bank because port width and depth
quantization are ignored. A LUT-fabric 8-bit MAC is costed at a flat
LUT_PER_MAC; the window and output-pixel double buffers are small and
register/LUTRAM-resident, reported as bytes and not charged against BRAM.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional

from .accel.model import AccelConfig
from .graph import NetworkGraph

BRAM_BYTES = 4608      # one 36Kb block, byte-addressed approximation
LUT_PER_MAC = 110      # coarse 8x8 multiply + accumulate slice cost


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class DeviceBudget:
    name: str
    lut: int
    ff: int
    bram_36k: int
    dsp: int


BUDGETS: Dict[str, DeviceBudget] = {
    "xc7z020": DeviceBudget("xc7z020", lut=53200, ff=106400, bram_36k=140, dsp=220),
    "xc7z045": DeviceBudget("xc7z045", lut=218600, ff=437200, bram_36k=545, dsp=900),
}


@dataclass(frozen=True)
class CacheMaxima:
    """Largest footprint any layer asks of each cache, in codes."""

    k: int = 1
    wi_x_chi: int = 1
    kxkxchi: int = 1
    q_choxkxkxchi: int = 1
    q_cho: int = 1
    cho: int = 1

    def merge(self, other: "CacheMaxima") -> "CacheMaxima":
        return CacheMaxima(*(max(a, b) for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.k, self.wi_x_chi, self.kxkxchi, self.q_choxkxkxchi,
                self.q_cho, self.cho)


def size_caches(graphs: Iterable[NetworkGraph], par_fact: int = 16) -> CacheMaxima:
    """Per-cache maxima over every conv layer of every (transformed) graph.

    Sizes assume one invocation per layer; feed transformed graphs so the
    first-layer reshape is already reflected in the shapes.
    """
    m = CacheMaxima()
    seen = False
    for graph in graphs:
        for node in graph.conv_nodes():
            seen = True
            s = node.conv
            q = _ceil_div(s.ch_out, par_fact)
            kkchi = s.kernel * s.kernel * s.ch_in
            m = m.merge(CacheMaxima(
                k=s.kernel,
                wi_x_chi=(s.w_in + 2 * s.pad) * s.ch_in,
                kxkxchi=kkchi,
                q_choxkxkxchi=q * kkchi,
                q_cho=q,
                cho=s.ch_out,
            ))
    if not seen:
        raise ValueError("no conv layers to size caches for")
    return m


def autosize_config(config: AccelConfig, graphs: Iterable[NetworkGraph],
                    keep: Iterable[str] = ()) -> AccelConfig:
    """Shrink-wrap the cache bounds of ``config`` onto the networks' needs.

    Fields named in ``keep`` stay as given (a sweep may pin them); everything
    else becomes exactly the measured maximum.
    """
    m = size_caches(graphs, config.par_fact)
    fields = {
        "k_max": m.k,
        "wi_x_chi_max": m.wi_x_chi,
        "kxkxchi_max": m.kxkxchi,
        "q_choxkxkxchi_max": m.q_choxkxkxchi,
        "q_cho_max": m.q_cho,
        "cho_max": m.cho,
    }
    updates = {k: v for k, v in fields.items() if k not in set(keep)}
    return replace(config, **updates)


@dataclass
class ResourceEstimate:
    macs: int
    dsp_macs: int
    lut_macs: int
    bram_weights: int
    bram_biases: int
    bram_linebuf: int
    lutram_bytes: int
    lut_est: int
    budget: DeviceBudget

    @property
    def bram_total(self) -> int:
        return self.bram_weights + self.bram_biases + self.bram_linebuf

    @property
    def feasible(self) -> bool:
        return (self.dsp_macs <= self.budget.dsp
                and self.bram_total <= self.budget.bram_36k
                and self.lut_est <= self.budget.lut)

    def violations(self) -> List[str]:
        out = []
        if self.dsp_macs > self.budget.dsp:
            out.append(f"dsp {self.dsp_macs} > {self.budget.dsp}")
        if self.bram_total > self.budget.bram_36k:
            out.append(f"bram {self.bram_total} > {self.budget.bram_36k}")
        if self.lut_est > self.budget.lut:
            out.append(f"lut {self.lut_est} > {self.budget.lut}")
        return out


def estimate_resources(config: AccelConfig,
                       budget: Optional[DeviceBudget] = None) -> ResourceEstimate:
    """Cost the MAC array and caches of one configuration against a budget."""
    if budget is None:
        budget = BUDGETS["xc7z020"]
    macs = config.macs
    dsp_macs = int(macs * config.dsp_share + 0.5)  # half-up, not banker's
    lut_macs = macs - dsp_macs
    bram_weights = config.par_fact * _ceil_div(config.q_choxkxkxchi_max, BRAM_BYTES)
    bram_biases = config.par_fact * _ceil_div(config.q_cho_max, BRAM_BYTES)
    bram_linebuf = config.k_max * _ceil_div(config.wi_x_chi_max, BRAM_BYTES)
    lutram_bytes = 2 * config.kxkxchi_max + 2 * config.cho_max  # double buffers
    return ResourceEstimate(
        macs=macs, dsp_macs=dsp_macs, lut_macs=lut_macs,
        bram_weights=bram_weights, bram_biases=bram_biases,
        bram_linebuf=bram_linebuf, lutram_bytes=lutram_bytes,
        lut_est=lut_macs * LUT_PER_MAC, budget=budget,
    )
