"""Binary matrix/model files and token frequency files.

All integers are little-endian. Matrix files (``GRMX``)::

    magic "GRMX" | version u32 | dtype u8 (0 f32, 1 f64) | rows u64 | cols u64 | payload

Model files (``GRLR``)::

    magic "GRLR" | version u32 | flags u8 (bit0 quantized) | N u64 | D u64 | c u32
    per cluster: count u64 | members u64[count] | rank u32 | U | V

Plain factors are row-major f32. Quantized factors are
``bits u8 | range_min f64 | range_max f64 | codes`` with codes packed
LSB-first and padded to a byte boundary.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .baselines import QuantizedBlockModel, QuantizedMatrix
from .compressor import BlockLowRankModel, BlockPartition, frequency_table
from .errors import (
    BadMagicError,
    BadVersionError,
    FormatError,
    FrequencyFileError,
    InvalidInputError,
    PartitionError,
    TruncatedError,
)
from .numlin import FactorPair

VERSION = 1
MATRIX_MAGIC = b"GRMX"
MODEL_MAGIC = b"GRLR"
_MATRIX_HEADER = struct.Struct("<4sIBQQ")
_MODEL_HEADER = struct.Struct("<4sIBQQI")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
FLAG_QUANTIZED = 0x01


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"truncated {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count, what), dtype=dtype, count=count)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes after payload")


def _check_header(magic: bytes, version: int, expected: bytes) -> None:
    if magic != expected:
        raise BadMagicError(f"bad magic {magic!r}, expected {expected!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}, expected {VERSION}")


# -- matrices -----------------------------------------------------------------

def encode_matrix(A, dtype=np.float64) -> bytes:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidInputError(f"matrix must be 2-D, got shape {A.shape}")
    code = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}.get(np.dtype(dtype))
    if code is None:
        raise InvalidInputError(f"unsupported dtype {dtype}")
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, VERSION, code, A.shape[0], A.shape[1])
    return header + np.ascontiguousarray(A, dtype=_DTYPES[code]).tobytes()


def decode_matrix(data: bytes) -> tuple[np.ndarray, np.dtype]:
    r = _Reader(data)
    magic, version, code, rows, cols = _MATRIX_HEADER.unpack(r.take(_MATRIX_HEADER.size, "header"))
    _check_header(magic, version, MATRIX_MAGIC)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    payload = r.array(_DTYPES[code], rows * cols, "payload")
    r.finish()
    return payload.astype(np.float64).reshape(rows, cols), _DTYPES[code].newbyteorder("=")


def write_matrix(path, A, dtype=np.float64) -> None:
    """Write ``A`` as a GRMX file; ``dtype`` float32 narrows the payload."""
    atomic_write(path, encode_matrix(A, dtype))


def read_matrix(path, with_dtype: bool = False):
    """Read a GRMX file as float64; optionally also return the stored dtype."""
    A, dtype = decode_matrix(Path(path).read_bytes())
    return (A, dtype) if with_dtype else A


# -- frequencies --------------------------------------------------------------

def read_frequencies(path, n: Optional[int] = None) -> np.ndarray:
    """Parse ``token<TAB>count`` lines; row order is the token identity.

    With ``n`` given the file must have exactly ``n`` lines.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if n is None:
        n = len(lines)
    elif len(lines) != n:
        raise FrequencyFileError(f"{path}: expected {n} lines, found {len(lines)}")
    counts = np.empty(n, dtype=np.float64)
    for lineno, line in enumerate(lines, start=1):
        _, sep, raw = line.rpartition("\t")
        try:
            if not sep:
                raise ValueError
            value = int(raw)
            if value < 0:
                raise ValueError
        except ValueError:
            raise FrequencyFileError(f"{path}:{lineno}: unparsable count {raw!r}") from None
        counts[lineno - 1] = value
    return frequency_table(counts, n)


def write_frequencies(path, counts, tokens=None) -> None:
    counts = np.asarray(counts)
    tokens = tokens if tokens is not None else [f"tok{i}" for i in range(len(counts))]
    text = "".join(f"{t}\t{int(c)}\n" for t, c in zip(tokens, counts))
    atomic_write(path, text.encode("utf-8"))


# -- models -------------------------------------------------------------------

def _pack_codes(codes: np.ndarray, bits: int) -> bytes:
    flat = codes.astype(np.uint32).ravel()
    bitplanes = (flat[:, None] >> np.arange(bits, dtype=np.uint32)) & 1
    return np.packbits(bitplanes.astype(np.uint8).ravel(), bitorder="little").tobytes()


def _unpack_codes(raw: bytes, count: int, bits: int) -> np.ndarray:
    bitstream = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    bitplanes = bitstream[: count * bits].reshape(count, bits).astype(np.uint32)
    return (bitplanes << np.arange(bits, dtype=np.uint32)).sum(axis=1, dtype=np.uint32)


def _encode_quantized(Q: QuantizedMatrix) -> bytes:
    return struct.pack("<Bdd", Q.bits, Q.range_min, Q.range_max) + _pack_codes(Q.codes, Q.bits)


def _decode_quantized(r: _Reader, shape: tuple, what: str) -> QuantizedMatrix:
    bits, lo, hi = r.unpack("<Bdd", f"{what} quantization header")
    if not 1 <= bits <= 16:
        raise FormatError(f"{what}: invalid bit width {bits}")
    if not lo <= hi:
        raise FormatError(f"{what}: range_min exceeds range_max")
    count = shape[0] * shape[1]
    raw = r.take((count * bits + 7) // 8, f"{what} codes")
    codes = _unpack_codes(raw, count, bits).reshape(shape)
    return QuantizedMatrix(shape=shape, bits=int(bits), codes=codes, range_min=lo, range_max=hi)


def encode_model(model: Union[BlockLowRankModel, QuantizedBlockModel]) -> bytes:
    quantized = isinstance(model, QuantizedBlockModel)
    n, d = model.dims
    part = model.partition
    out = [_MODEL_HEADER.pack(MODEL_MAGIC, VERSION, FLAG_QUANTIZED if quantized else 0, n, d, part.n_clusters)]
    for p, (members, k) in enumerate(zip(part.members, part.ranks)):
        out.append(struct.pack("<Q", members.size))
        out.append(members.astype("<u8").tobytes())
        out.append(struct.pack("<I", k))
        if quantized:
            out.append(_encode_quantized(model.U[p]))
            out.append(_encode_quantized(model.V[p]))
        else:
            f = model.factors[p]
            out.append(np.ascontiguousarray(f.U, dtype="<f4").tobytes())
            out.append(np.ascontiguousarray(f.V, dtype="<f4").tobytes())
    return b"".join(out)


def decode_model(data: bytes) -> Union[BlockLowRankModel, QuantizedBlockModel]:
    r = _Reader(data)
    magic, version, flags, n, d, c = _MODEL_HEADER.unpack(r.take(_MODEL_HEADER.size, "header"))
    _check_header(magic, version, MODEL_MAGIC)
    if flags & ~FLAG_QUANTIZED:
        raise FormatError(f"unknown flag bits {flags:#04x}")
    quantized = bool(flags & FLAG_QUANTIZED)
    if c < 1 or n < 1 or d < 1:
        raise PartitionError(f"invalid dimensions N={n}, D={d}, c={c}")

    members, ranks, us, vs = [], [], [], []
    for p in range(c):
        (count,) = r.unpack("<Q", f"cluster {p} size")
        if count == 0 or count > n:
            raise PartitionError(f"cluster {p}: invalid member count {count}")
        idx = r.array("<u8", count, f"cluster {p} members")
        if np.any(idx >= n):
            raise PartitionError(f"cluster {p}: member index out of range")
        (k,) = r.unpack("<I", f"cluster {p} rank")
        if not 1 <= k <= min(count, d):
            raise PartitionError(f"cluster {p}: rank {k} outside [1, {min(count, d)}]")
        members.append(idx.astype(np.int64))
        ranks.append(k)
        if quantized:
            us.append(_decode_quantized(r, (int(count), k), f"cluster {p} U"))
            vs.append(_decode_quantized(r, (int(d), k), f"cluster {p} V"))
        else:
            us.append(r.array("<f4", count * k, f"cluster {p} U").astype(np.float64).reshape(count, k))
            vs.append(r.array("<f4", d * k, f"cluster {p} V").astype(np.float64).reshape(d, k))
    r.finish()

    try:
        part = BlockPartition(members=tuple(members), n_rows=int(n), ranks=tuple(ranks))
    except InvalidInputError as exc:
        raise PartitionError(str(exc)) from None
    if quantized:
        bits = {q.bits for q in us + vs}
        if len(bits) != 1:
            raise FormatError("factor matrices use different bit widths")
        return QuantizedBlockModel(partition=part, U=us, V=vs, bits=bits.pop(), dims=(n, d))
    factors = [FactorPair(U=u, V=v) for u, v in zip(us, vs)]
    return BlockLowRankModel(partition=part, factors=factors, dims=(n, d))


def save_model(path, model) -> None:
    atomic_write(path, encode_model(model))


def load_model(path):
    """Load a GRLR file, validating the partition and all factor shapes."""
    return decode_model(Path(path).read_bytes())
