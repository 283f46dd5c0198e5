"""Functional emulation of the line-buffer convolution engine.

The emulation reproduces the hardware's storage organization and schedule,
not just its arithmetic:

* the input feature map is a stream, read front to back, each code at most
  once per invocation; all reuse is served on chip
* a K-row line buffer holds padded input rows; a logical-to-physical row
  permutation rotates left by the stride when the window moves down, so
  surviving rows are never copied
* two K x K x CHI windows and two output-pixel registers double-buffer the
  pixel loop: while one window is being computed, the other is reloaded
  three pixels ahead, and the previous result is written back
* weights live in par_fact banks, one per PE; bank p holds the output
  channels congruent to p, q_cho = ceil(CHO / par_fact) channel slots each,
  zero-padded slots squaring off the banks when par_fact does not divide CHO

Per-pixel arithmetic goes through the same fxp semantics as conv_ref (via
sqj2.kernels), so any mismatch between the two is a scheduling or data
movement bug, which is exactly what the invariants here are armed to catch.

Fixed-point only: the hardware has no float datapath.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import kernels
from ..fmap import FeatureMap
from ..fxp import MAX_KKCHI, FxpFormat
from ..graph import ConvSpec, PoolSpec
from ..params import ParamBlob


@dataclass(frozen=True)
class AccelConfig:
    """Compile-time shape of the accelerator instance."""

    par_fact: int = 16           # processing elements (output channels in flight)
    chi_num: int = 16            # MAC lanes per PE (input channels per cycle)
    k_max: int = 3               # line-buffer rows / max kernel
    wi_x_chi_max: int = 8192     # codes per line-buffer row
    kxkxchi_max: int = 1024      # codes per window buffer
    q_choxkxkxchi_max: int = 16384  # weight codes per bank
    q_cho_max: int = 64          # channel slots per bank
    cho_max: int = 1024          # codes per output-pixel register
    dsp_share: float = 0.5       # fraction of MACs mapped to DSP blocks

    def __post_init__(self):
        for name in ("par_fact", "chi_num", "k_max", "wi_x_chi_max", "kxkxchi_max",
                     "q_choxkxkxchi_max", "q_cho_max", "cho_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dsp_share <= 1.0:
            raise ValueError("dsp_share must be in [0, 1]")

    @property
    def macs(self) -> int:
        return self.par_fact * self.chi_num

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "AccelConfig":
        return AccelConfig(**d)


@dataclass
class ConvInvocation:
    """One accelerator call: a conv (or conv+pool) with its formats."""

    name: str
    spec: ConvSpec
    fl_in: int
    fl_out: int
    fl_w: int
    fl_b: int
    pool: Optional[PoolSpec] = None      # fused max pool, None = bypass
    channel_range: Optional[Tuple[int, int]] = None  # slice of a partitioned layer

    @property
    def acc_fl(self) -> int:
        return self.fl_in + self.fl_w

    @property
    def kxchi(self) -> int:
        return self.spec.kernel * self.spec.ch_in

    @property
    def kxkxchi(self) -> int:
        return self.spec.kernel * self.kxchi

    @property
    def wi_x_chi(self) -> int:
        return (self.spec.w_in + 2 * self.spec.pad) * self.spec.ch_in

    def q_cho(self, par_fact: int) -> int:
        return -(-self.spec.ch_out // par_fact)

    def n_param_codes(self) -> int:
        return self.spec.ch_out * (self.kxkxchi + 1)

    def check_bounds(self, config: AccelConfig) -> List[str]:
        s = self.spec
        problems = []
        if s.kernel > config.k_max:
            problems.append(f"kernel {s.kernel} > k_max {config.k_max}")
        if self.wi_x_chi > config.wi_x_chi_max:
            problems.append(f"row needs {self.wi_x_chi} codes > wi_x_chi_max "
                            f"{config.wi_x_chi_max}")
        if self.kxkxchi > config.kxkxchi_max:
            problems.append(f"window needs {self.kxkxchi} codes > kxkxchi_max "
                            f"{config.kxkxchi_max}")
        if self.kxkxchi > MAX_KKCHI:
            problems.append(f"k*k*ci {self.kxkxchi} breaks the 32-bit accumulator bound")
        q = self.q_cho(config.par_fact)
        if q > config.q_cho_max:
            problems.append(f"q_cho {q} > q_cho_max {config.q_cho_max}")
        if q * self.kxkxchi > config.q_choxkxkxchi_max:
            problems.append(f"bank needs {q * self.kxkxchi} codes > q_choxkxkxchi_max "
                            f"{config.q_choxkxkxchi_max}")
        if s.ch_out > config.cho_max:
            problems.append(f"ch_out {s.ch_out} > cho_max {config.cho_max}")
        if self.acc_fl < self.fl_b:
            problems.append(f"bias fl {self.fl_b} exceeds accumulator fl {self.acc_fl}")
        return problems


class WeightBanks:
    """Per-PE weight and bias banks.

    Bank p, slot j holds output channel p + j*par_fact when that channel
    exists; the remaining slots are zero padding and are never written back.
    """

    def __init__(self, blob: ParamBlob, par_fact: int):
        if not blob.is_fixed:
            raise ValueError("accelerator banks hold int8 codes")
        co, k, _, ci = blob.weights.shape
        kkci = k * k * ci
        q = -(-co // par_fact)
        self.par_fact = par_fact
        self.q_cho = q
        self.ch_out = co
        self.weights = np.zeros((par_fact, q, kkci), dtype=np.int8)
        self.biases = np.zeros((par_fact, q), dtype=np.int8)
        self.co_of_slot = np.full((par_fact, q), -1, dtype=np.int32)
        flat = blob.weights.reshape(co, kkci)
        for p in range(par_fact):
            for j in range(q):
                ch = p + j * par_fact
                if ch < co:
                    self.weights[p, j] = flat[ch]
                    self.biases[p, j] = blob.biases[ch]
                    self.co_of_slot[p, j] = ch

    def bank_channels(self, p: int) -> List[int]:
        return [c for c in self.co_of_slot[p] if c >= 0]

    @property
    def n_codes(self) -> int:
        return int(self.weights.size + self.biases.size)


class InputStream:
    """Front-to-back reader over the input map with read accounting.

    fetch() hands out one row segment in padded coordinates, injecting zero
    codes outside the real map (padding is never a stream read). Each real
    code may be fetched at most once per invocation; the line buffer is the
    only place reuse may come from.
    """

    def __init__(self, fmap: FeatureMap, pad: int):
        self.data = fmap.data
        self.pad = pad
        self.reads = np.zeros(fmap.shape[:2], dtype=np.int32)  # per-pixel

    def fetch(self, row_padded: int, col_padded: int, n_pixels: int) -> np.ndarray:
        h, w, c = self.data.shape
        row = row_padded - self.pad
        out = np.zeros((n_pixels, c), dtype=np.int8)
        if 0 <= row < h:
            c0 = max(col_padded - self.pad, 0)
            c1 = min(col_padded - self.pad + n_pixels, w)
            if c1 > c0:
                out[c0 - (col_padded - self.pad):c1 - (col_padded - self.pad)] = \
                    self.data[row, c0:c1]
                self.reads[row, c0:c1] += 1
        return out.reshape(-1)

    def assert_read_discipline(self, needed_rows: np.ndarray, used_cols: int) -> None:
        """needed_rows: boolean mask of real rows some kernel window touches."""
        if self.reads.max() > 1:
            hot = np.argwhere(self.reads > 1)[0]
            raise AssertionError(f"input pixel {tuple(hot)} streamed more than once")
        for r in np.flatnonzero(needed_rows):
            row = self.reads[r, :used_cols]
            if row.size and row.min() < 1:
                c = int(np.argmin(row))
                raise AssertionError(f"input pixel ({r}, {c}) inside a receptive "
                                     "field was never streamed")


class LineBuffer:
    """k_rows physical rows plus the logical-to-physical permutation."""

    def __init__(self, k_rows: int, row_codes: int):
        self.rows = np.zeros((k_rows, row_codes), dtype=np.int8)
        self.order = np.arange(k_rows)

    def rotate(self, stride: int) -> None:
        # rows shift up by the stride; the oldest recycle to the back
        self.order = np.roll(self.order, -stride)

    def logical_row(self, r: int) -> np.ndarray:
        return self.rows[self.order[r]]


@dataclass
class AccelRunStats:
    rows_loaded: List[int] = field(default_factory=list)  # new rows per output row
    stream_pixels: int = 0
    output_writes: int = 0
    hidden_reread_pixels: int = 0


def _load_row_segment(stream: InputStream, lb: LineBuffer, logical: int,
                      padded_row: int, px0: int, n_px: int, chi: int) -> None:
    lb.logical_row(logical)[px0 * chi:(px0 + n_px) * chi] = stream.fetch(
        padded_row, px0, n_px)


def _shift_linebuf(stream: InputStream, lb: LineBuffer, inv: ConvInvocation,
                   ho: int, stats: AccelRunStats) -> List[Tuple[int, int]]:
    """Rotate, then prime each newly entering row with its first K pixels.

    Returns the (logical row, padded input row) pairs that are still filling
    and must advance alongside the pixel loop.
    """
    k, s = inv.spec.kernel, inv.spec.stride
    if ho == 0:
        new_logical = list(range(k))
    else:
        lb.rotate(s)
        new_logical = list(range(max(k - s, 0), k))
    chi = inv.spec.ch_in
    pairs = []
    for r in new_logical:
        padded_row = ho * s + r
        _load_row_segment(stream, lb, r, padded_row, 0, k, chi)
        pairs.append((r, padded_row))
    stats.rows_loaded.append(len(new_logical))
    return pairs


def _init_linebuf_win(lb: LineBuffer, win: np.ndarray, inv: ConvInvocation) -> None:
    k, chi = inv.spec.kernel, inv.spec.ch_in
    kxchi = inv.kxchi
    for r in range(k):
        win[r * kxchi:(r + 1) * kxchi] = lb.logical_row(r)[:kxchi]


def _update_linebuf_win(stream: InputStream, lb: LineBuffer, filling, fill_pt: int,
                        win: np.ndarray, iwp_px: int, inv: ConvInvocation) -> int:
    """Stream the next stride's pixels into the filling rows, then reload the
    idle window at pixel offset iwp_px. Returns the advanced fill pointer."""
    k, s, chi = inv.spec.kernel, inv.spec.stride, inv.spec.ch_in
    w_padded = inv.spec.w_in + 2 * inv.spec.pad
    n = min(s, w_padded - fill_pt)
    if n > 0:
        for logical, padded_row in filling:
            _load_row_segment(stream, lb, logical, padded_row, fill_pt, n, chi)
        fill_pt += n
    kxchi = inv.kxchi
    row_codes = lb.rows.shape[1]
    for r in range(k):
        c0 = iwp_px * chi
        c1 = min(c0 + kxchi, row_codes)
        seg = lb.logical_row(r)[c0:c1]
        win[r * kxchi:r * kxchi + len(seg)] = seg
        if len(seg) < kxchi:
            win[r * kxchi + len(seg):(r + 1) * kxchi] = 0
    return fill_pt


def _pixel_calc(win: np.ndarray, banks: WeightBanks, inv: ConvInvocation) -> np.ndarray:
    return kernels.bank_pixel_fixed(
        win[:inv.kxkxchi], banks.weights, banks.biases, banks.co_of_slot,
        inv.spec.ch_out, inv.acc_fl - inv.fl_b, inv.acc_fl - inv.fl_out,
    )


class _RowSink:
    """Collects written-back pixels into the output map, row-major, and
    hands completed rows to an optional consumer (the fused pool)."""

    def __init__(self, inv: ConvInvocation, consumer=None):
        s = inv.spec
        self.out = np.zeros((s.h_out, s.w_out, s.ch_out), dtype=np.int8)
        self.writes = np.zeros((s.h_out, s.w_out), dtype=np.int32)
        self.row = 0
        self.col = 0
        self.consumer = consumer

    def push_pixel(self, codes: np.ndarray) -> None:
        if self.row >= self.out.shape[0]:
            raise AssertionError("write back past the end of the output map")
        self.out[self.row, self.col] = codes
        self.writes[self.row, self.col] += 1
        self.col += 1
        if self.col == self.out.shape[1]:
            if self.consumer is not None:
                self.consumer.push_row(self.out[self.row])
            self.col = 0
            self.row += 1

    def finish(self) -> np.ndarray:
        if self.row != self.out.shape[0] or self.col != 0:
            raise AssertionError(f"output incomplete: stopped at ({self.row}, {self.col})")
        if self.writes.min() != 1 or self.writes.max() != 1:
            raise AssertionError("some output pixel written zero or multiple times")
        return self.out


def _write_back(sink: _RowSink, out_pix: np.ndarray, flag: int, use_relu: bool,
                inv: ConvInvocation, stats: AccelRunStats) -> None:
    if not flag:
        return
    codes = out_pix[:inv.spec.ch_out]
    if use_relu:
        codes = np.maximum(codes, 0)
    sink.push_pixel(codes)
    stats.output_writes += 1


def accel_conv(inv: ConvInvocation, fmap: FeatureMap, banks: WeightBanks,
               config: AccelConfig, pool_consumer=None,
               check: bool = True) -> Tuple[FeatureMap, AccelRunStats]:
    """Run one invocation through the emulated cache hierarchy and schedule.

    The loop structure mirrors the hardware: per output row, rotate and
    prime the line buffer, seed window 0, then walk output pixels with the
    double-buffered window pair; even pixels compute window 0 while window 1
    reloads, odd pixels the reverse, and each write-back retires the pixel
    computed one iteration earlier. One flush after the loop retires the
    last pixel.
    """
    spec = inv.spec
    problems = inv.check_bounds(config)
    if problems:
        raise ValueError(f"{inv.name}: " + "; ".join(problems))
    if fmap.shape != (spec.h_in, spec.w_in, spec.ch_in):
        raise ValueError(f"{inv.name}: feature map {fmap.shape} does not match spec")
    if not fmap.is_fixed or fmap.fmt.frac_len != inv.fl_in:
        raise ValueError(f"{inv.name}: expected int8 input at fl {inv.fl_in}")
    if banks.ch_out != spec.ch_out or banks.weights.shape[2] != inv.kxkxchi:
        raise ValueError(f"{inv.name}: banks do not match the invocation")

    stats = AccelRunStats()
    stream = InputStream(fmap, spec.pad)
    lb = LineBuffer(spec.kernel, inv.wi_x_chi)
    sink = _RowSink(inv, consumer=pool_consumer)
    win = [np.zeros(inv.kxkxchi, dtype=np.int8) for _ in range(2)]
    out_pix = [np.zeros(spec.ch_out, dtype=np.int8) for _ in range(2)]
    s, chi = spec.stride, spec.ch_in

    for ho in range(spec.h_out):
        filling = _shift_linebuf(stream, lb, inv, ho, stats)
        fill_pt = spec.kernel  # pixels of each filling row already primed
        _init_linebuf_win(lb, win[0], inv)
        iwp_px = [2 * s, s]  # next reload offsets (pixels) for win0, win1
        for wo in range(spec.w_out):
            cur = wo & 1
            out_pix[cur] = _pixel_calc(win[cur], banks, inv)
            fill_pt = _update_linebuf_win(stream, lb, filling, fill_pt,
                                          win[1 - cur], iwp_px[1 - cur], inv)
            iwp_px[1 - cur] += 2 * s
            _write_back(sink, out_pix[1 - cur], wo, spec.use_relu, inv, stats)
        _write_back(sink, out_pix[(spec.w_out - 1) & 1], 1, spec.use_relu, inv, stats)

    stats.stream_pixels = int(stream.reads.sum())
    if check:
        # every real row some kernel window touches must stream exactly once;
        # with stride > kernel the rows between windows are legitimately
        # skipped and must never stream at all (reads.max() <= 1 covers that)
        needed = np.zeros(spec.h_in, dtype=bool)
        for ho in range(spec.h_out):
            r0 = ho * s - spec.pad
            needed[max(r0, 0):min(r0 + spec.kernel, spec.h_in)] = True
        stream.assert_read_discipline(needed, spec.w_in)
        out = sink.finish()
    else:
        out = sink.out
    return FeatureMap(out, FxpFormat(inv.fl_out)), stats
