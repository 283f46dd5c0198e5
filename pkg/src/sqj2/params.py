"""Layer parameter containers and their binary formats.

Quantized parameters (the format the accelerator consumes), little-endian:

    magic 'SQJ2' | version u16 | blob count u16
    per blob:
        name_len u8 | name bytes | CO u16 | K u8 | CI u16 | FLw i8 | FLb i8
        CO*K*K*CI weight codes (int8, canonical [co][kh][kw][ci] order)
        CO bias codes (int8)

Real-valued parameters (the staging container the quantizer consumes) use
magic 'SQJR' with the same header and per-blob geometry fields but float32
payloads and no FL fields.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

MAGIC_FIXED = b"SQJ2"
MAGIC_REAL = b"SQJR"
VERSION = 1

_FILE_HEADER = struct.Struct("<4sHH")
_BLOB_FIXED = struct.Struct("<HBHbb")
_BLOB_REAL = struct.Struct("<HBH")


class ParamIOError(Exception):
    pass


@dataclass
class ParamBlob:
    """One conv layer's weights [CO, K, K, CI] and biases [CO].

    Either fixed (int8 arrays, w_fl/b_fl set) or real (float32 arrays,
    w_fl/b_fl None).
    """

    name: str
    weights: np.ndarray
    biases: np.ndarray
    w_fl: Optional[int] = None
    b_fl: Optional[int] = None

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(f"{self.name}: weights must be [CO, K, K, CI]")
        co, kh, kw, _ = self.weights.shape
        if kh != kw:
            raise ValueError(f"{self.name}: kernel must be square, got {kh}x{kw}")
        if self.biases.shape != (co,):
            raise ValueError(f"{self.name}: biases must be [CO={co}], got {self.biases.shape}")
        if self.is_fixed:
            if self.w_fl is None or self.b_fl is None:
                raise ValueError(f"{self.name}: int8 blob needs w_fl and b_fl")
        elif self.weights.dtype != np.float32:
            raise ValueError(f"{self.name}: weights must be int8 or float32")

    @property
    def is_fixed(self) -> bool:
        return self.weights.dtype == np.int8

    @property
    def co(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    @property
    def ci(self) -> int:
        return self.weights.shape[3]


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 255:
        raise ParamIOError(f"blob name too long: {name!r}")
    return bytes([len(raw)]) + raw


def params_to_bytes(blobs: Iterable[ParamBlob]) -> bytes:
    blobs = list(blobs)
    fixed = all(b.is_fixed for b in blobs)
    if not fixed and any(b.is_fixed for b in blobs):
        raise ParamIOError("cannot mix fixed and real blobs in one file")
    out = [_FILE_HEADER.pack(MAGIC_FIXED if fixed else MAGIC_REAL, VERSION, len(blobs))]
    for b in blobs:
        out.append(_pack_name(b.name))
        if fixed:
            out.append(_BLOB_FIXED.pack(b.co, b.k, b.ci, b.w_fl, b.b_fl))
            out.append(b.weights.astype("<i1").tobytes())
            out.append(b.biases.astype("<i1").tobytes())
        else:
            out.append(_BLOB_REAL.pack(b.co, b.k, b.ci))
            out.append(b.weights.astype("<f4").tobytes())
            out.append(b.biases.astype("<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParamIOError(f"truncated file at byte {self.pos}, wanted {n} more")
        piece = self.buf[self.pos:self.pos + n]
        self.pos += n
        return piece

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def params_from_bytes(buf: bytes) -> Dict[str, ParamBlob]:
    r = _Reader(buf)
    magic, version, count = r.unpack(_FILE_HEADER)
    if magic not in (MAGIC_FIXED, MAGIC_REAL):
        raise ParamIOError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ParamIOError(f"unsupported version {version}")
    fixed = magic == MAGIC_FIXED
    blobs: Dict[str, ParamBlob] = {}
    for _ in range(count):
        (name_len,) = r.take(1)
        name = r.take(name_len).decode("utf-8")
        if fixed:
            co, k, ci, w_fl, b_fl = r.unpack(_BLOB_FIXED)
            w = np.frombuffer(r.take(co * k * k * ci), dtype="<i1").reshape(co, k, k, ci)
            b = np.frombuffer(r.take(co), dtype="<i1")
            blob = ParamBlob(name, w.copy(), b.copy(), w_fl, b_fl)
        else:
            co, k, ci = r.unpack(_BLOB_REAL)
            w = np.frombuffer(r.take(4 * co * k * k * ci), dtype="<f4").reshape(co, k, k, ci)
            b = np.frombuffer(r.take(4 * co), dtype="<f4")
            blob = ParamBlob(name, w.copy(), b.copy())
        if name in blobs:
            raise ParamIOError(f"duplicate blob name {name!r}")
        blobs[name] = blob
    if r.pos != len(buf):
        raise ParamIOError(f"{len(buf) - r.pos} trailing bytes after last blob")
    return blobs


def write_params(path, blobs: Iterable[ParamBlob]) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(blobs))


def read_params(path) -> Dict[str, ParamBlob]:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
