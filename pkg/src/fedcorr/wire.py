"""Uplink payload variants and their binary encoding.

Record layout (all integers little-endian u32, all reals little-endian f64)::

    tag:u8  body

    0x01 Raw             d, d x f64
    0x02 SubspaceCoeffs  r, r x f64
    0x03 PcaSlices       n, then per slice: r_i, r_i x f64
    0x04 LowRankDiag     r, r x f64
    0x05 Predictive      h, h x f64, dim, k, k x u32 index, k x f64 value

See ``docs/wire_format.md`` for the element-count conventions.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from fedcorr.compressors import SparseResidual
from fedcorr.errors import ParseError

TAG_RAW = 0x01
TAG_SUBSPACE = 0x02
TAG_PCA_SLICES = 0x03
TAG_LOW_RANK_DIAG = 0x04
TAG_PREDICTIVE = 0x05


@dataclass(frozen=True)
class Raw:
    values: np.ndarray

    @property
    def uplink_element_count(self) -> int:
        return int(self.values.size)

    index_overhead = 0


@dataclass(frozen=True)
class SubspaceCoeffs:
    coeffs: np.ndarray

    @property
    def uplink_element_count(self) -> int:
        return int(self.coeffs.size)

    index_overhead = 0


@dataclass(frozen=True)
class PcaSlices:
    coeffs: tuple

    @property
    def uplink_element_count(self) -> int:
        return sum(int(c.size) for c in self.coeffs)

    index_overhead = 0


@dataclass(frozen=True)
class LowRankDiag:
    diag: np.ndarray

    @property
    def uplink_element_count(self) -> int:
        return int(self.diag.size)

    index_overhead = 0


@dataclass(frozen=True)
class Predictive:
    coeffs: np.ndarray
    residual: SparseResidual

    @property
    def uplink_element_count(self) -> int:
        """Coefficients plus kept residual values; indices are tallied apart."""
        return int(self.coeffs.size) + self.residual.k

    @property
    def index_overhead(self) -> int:
        return self.residual.k


CompressedUpdate = Raw | SubspaceCoeffs | PcaSlices | LowRankDiag | Predictive


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _f64s(a) -> bytes:
    return np.asarray(a, dtype="<f8").tobytes()


def encode(update: CompressedUpdate) -> bytes:
    if isinstance(update, Raw):
        return bytes([TAG_RAW]) + _u32(update.values.size) + _f64s(update.values)
    if isinstance(update, SubspaceCoeffs):
        return bytes([TAG_SUBSPACE]) + _u32(update.coeffs.size) + _f64s(update.coeffs)
    if isinstance(update, LowRankDiag):
        return bytes([TAG_LOW_RANK_DIAG]) + _u32(update.diag.size) + _f64s(update.diag)
    if isinstance(update, PcaSlices):
        parts = [bytes([TAG_PCA_SLICES]), _u32(len(update.coeffs))]
        for c in update.coeffs:
            parts += [_u32(c.size), _f64s(c)]
        return b"".join(parts)
    if isinstance(update, Predictive):
        res = update.residual
        return b"".join(
            [
                bytes([TAG_PREDICTIVE]),
                _u32(update.coeffs.size),
                _f64s(update.coeffs),
                _u32(res.dim),
                _u32(res.k),
                np.asarray(res.indices, dtype="<u4").tobytes(),
                _f64s(res.values),
            ]
        )
    raise TypeError(f"not a compressed update: {type(update).__name__}")


class _Reader:
    def __init__(self, data: bytes):
        self.buf = io.BytesIO(data)

    def take(self, n: int) -> bytes:
        chunk = self.buf.read(n)
        if len(chunk) != n:
            raise ParseError(f"truncated record: wanted {n} bytes, got {len(chunk)}")
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def at_end(self) -> bool:
        return self.buf.read(1) == b""


def decode(data: bytes) -> CompressedUpdate:
    rd = _Reader(data)
    tag = rd.take(1)[0]
    if tag == TAG_RAW:
        out = Raw(rd.f64s(rd.u32()))
    elif tag == TAG_SUBSPACE:
        out = SubspaceCoeffs(rd.f64s(rd.u32()))
    elif tag == TAG_LOW_RANK_DIAG:
        out = LowRankDiag(rd.f64s(rd.u32()))
    elif tag == TAG_PCA_SLICES:
        n = rd.u32()
        out = PcaSlices(tuple(rd.f64s(rd.u32()) for _ in range(n)))
    elif tag == TAG_PREDICTIVE:
        coeffs = rd.f64s(rd.u32())
        dim = rd.u32()
        k = rd.u32()
        idx = np.frombuffer(rd.take(4 * k), dtype="<u4").astype(np.int64)
        vals = rd.f64s(k)
        if k and (np.any(np.diff(idx) <= 0) or idx[-1] >= dim):
            raise ParseError("residual indices must be ascending and below dim")
        out = Predictive(coeffs, SparseResidual(dim=dim, indices=idx, values=vals))
    else:
        raise ParseError(f"unknown tag 0x{tag:02x}")
    if not rd.at_end():
        raise ParseError("trailing bytes after record")
    return out
