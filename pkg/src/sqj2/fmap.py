"""Feature maps and the tensor file format.

A feature map is a dense H x W x C tensor stored channel-innermost (HWC),
the layout the accelerator streams: the flat offset of element (h, w, c) is
(h*W + w)*C + c, and a "pixel" is the C-long channel vector at one (h, w).

Storage is either int8 codes tagged with a fixed-point format, or float32
reals (format-free). File format (little-endian):

    magic 'SQT0' | H u16 | W u16 | C u16 | dtype u8 | frac_len i8 | payload

dtype 0 = int8 codes, 1 = float32 reals (frac_len written as 0).
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .fxp import FxpFormat, dequantize_array, quantize_array

MAGIC = b"SQT0"
_HEADER = struct.Struct("<4sHHHBb")

DTYPE_INT8 = 0
DTYPE_REAL32 = 1


class TensorIOError(Exception):
    pass


class FeatureMap:
    def __init__(self, data: np.ndarray, fmt: Optional[FxpFormat] = None):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValueError(f"feature map must be H x W x C, got shape {data.shape}")
        if data.dtype == np.int8:
            if fmt is None:
                raise ValueError("int8 feature map needs a fixed-point format")
        elif data.dtype == np.float32:
            fmt = None
        else:
            raise ValueError(f"feature map dtype must be int8 or float32, got {data.dtype}")
        self.data = data
        self.fmt = fmt

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_fixed(self) -> bool:
        return self.data.dtype == np.int8

    def pixel(self, h: int, w: int) -> np.ndarray:
        """Channel vector at (h, w); a view, not a copy."""
        return self.data[h, w]

    def flat_index(self, h: int, w: int, c: int) -> int:
        return (h * self.w + w) * self.c + c

    def to_real(self) -> "FeatureMap":
        if not self.is_fixed:
            return self
        return FeatureMap(dequantize_array(self.data, self.fmt).astype(np.float32))

    def quantized(self, fmt: FxpFormat) -> "FeatureMap":
        if self.is_fixed:
            if self.fmt == fmt:
                return self
            raise ValueError("re-quantizing an already fixed map is not supported here")
        return FeatureMap(quantize_array(self.data.astype(np.float64), fmt), fmt)

    def __repr__(self):
        kind = f"int8 fl={self.fmt.frac_len}" if self.is_fixed else "real32"
        return f"FeatureMap({self.h}x{self.w}x{self.c}, {kind})"


def tensor_to_bytes(fmap: FeatureMap) -> bytes:
    if fmap.is_fixed:
        dt, fl = DTYPE_INT8, fmap.fmt.frac_len
        payload = fmap.data.astype("<i1").tobytes()
        if not -128 <= fl <= 127:
            raise TensorIOError(f"frac_len {fl} does not fit the i8 header field")
    else:
        dt, fl = DTYPE_REAL32, 0
        payload = fmap.data.astype("<f4").tobytes()
    for dim in fmap.shape:
        if not 0 < dim <= 0xFFFF:
            raise TensorIOError(f"dimension {dim} does not fit the u16 header field")
    return _HEADER.pack(MAGIC, fmap.h, fmap.w, fmap.c, dt, fl) + payload


def tensor_from_bytes(buf: bytes) -> FeatureMap:
    if len(buf) < _HEADER.size:
        raise TensorIOError("truncated tensor: header incomplete")
    magic, h, w, c, dt, fl = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TensorIOError(f"bad magic {magic!r}, expected {MAGIC!r}")
    n = h * w * c
    body = buf[_HEADER.size:]
    if dt == DTYPE_INT8:
        if len(body) != n:
            raise TensorIOError(f"payload is {len(body)} bytes, expected {n}")
        data = np.frombuffer(body, dtype="<i1").reshape(h, w, c)
        return FeatureMap(data.copy(), FxpFormat(fl))
    if dt == DTYPE_REAL32:
        if len(body) != 4 * n:
            raise TensorIOError(f"payload is {len(body)} bytes, expected {4 * n}")
        data = np.frombuffer(body, dtype="<f4").reshape(h, w, c)
        return FeatureMap(data.copy())
    raise TensorIOError(f"unknown dtype tag {dt}")


def write_tensor(path, fmap: FeatureMap) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(fmap))


def read_tensor(path) -> FeatureMap:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())
