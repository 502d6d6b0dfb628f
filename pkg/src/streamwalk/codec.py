"""Integer codecs: Szudzik pairing, walk-triplet encoding and the chunk byte format.

Every scalar routine has a numpy twin operating on ``uint64`` arrays.  The
twins must agree bit for bit; the bulk paths of the engine rely on it.
"""

from __future__ import annotations

import math
from itertools import accumulate
from typing import NamedTuple, Sequence

import numpy as np

OPERAND_BITS = 32
OPERAND_LIMIT = 1 << OPERAND_BITS
U64_MASK = (1 << 64) - 1

_U64 = np.uint64


class EncodingOverflow(OverflowError):
    """An operand does not fit the 32-bit pairing domain."""


class ContractViolation(ValueError):
    """Input breaks a documented precondition (ordering, uniqueness)."""


class CorruptChunk(ValueError):
    """Chunk bytes cannot be decoded."""


# -- pairing ----------------------------------------------------------------


def szudzik_pair(x: int, y: int) -> int:
    if not (0 <= x < OPERAND_LIMIT and 0 <= y < OPERAND_LIMIT):
        raise EncodingOverflow(f"pairing operands must be < 2^{OPERAND_BITS}: ({x}, {y})")
    if x < y:
        return y * y + x
    return x * x + x + y


def szudzik_unpair(z: int) -> tuple[int, int]:
    r = math.isqrt(z)
    t = z - r * r
    if t < r:
        return t, r
    return r, t - r


def pair_array(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=_U64)
    y = np.asarray(y, dtype=_U64)
    if x.size and (int(x.max()) >= OPERAND_LIMIT or int(y.max()) >= OPERAND_LIMIT):
        raise EncodingOverflow(f"pairing operands must be < 2^{OPERAND_BITS}")
    return np.where(x < y, y * y + x, x * x + x + y)


def isqrt_array(z: np.ndarray) -> np.ndarray:
    """Exact floor square root of uint64 values."""
    z = np.asarray(z, dtype=_U64)
    r = np.floor(np.sqrt(z.astype(np.float64))).astype(_U64)
    top = _U64(OPERAND_LIMIT - 1)
    np.minimum(r, top, out=r)
    # float sqrt is off by at most one near 2^64; two passes each way is plenty
    for _ in range(2):
        r -= (r * r > z).astype(_U64)
    for _ in range(2):
        nxt = r + _U64(1)
        r += ((r < top) & (nxt * nxt <= z)).astype(_U64)
    return r


def unpair_array(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=_U64)
    r = isqrt_array(z)
    t = z - r * r
    low = t < r
    x = np.where(low, t, r)
    y = np.where(low, r, t - r)
    return x, y


# -- walk triplets ----------------------------------------------------------


class WalkTriplet(NamedTuple):
    walk_id: int
    position: int
    next_vertex: int


def encode_triplet(t: WalkTriplet, l: int) -> int:
    if not 0 <= t.position < l:
        raise ContractViolation(f"position {t.position} outside walk length {l}")
    f = t.walk_id * l + t.position
    if f >= OPERAND_LIMIT:
        raise EncodingOverflow(f"walk_id*l + position = {f} exceeds 2^{OPERAND_BITS}-1")
    return szudzik_pair(f, t.next_vertex)


def decode_triplet(e: int, l: int) -> WalkTriplet:
    f, nxt = szudzik_unpair(e)
    w, p = divmod(f, l)
    return WalkTriplet(w, p, nxt)


def encode_triplets(walks: np.ndarray, positions: np.ndarray, nexts: np.ndarray, l: int) -> np.ndarray:
    f = np.asarray(walks, dtype=_U64) * _U64(l) + np.asarray(positions, dtype=_U64)
    return pair_array(f, nexts)


def decode_triplets(values: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    f, nxt = unpair_array(values)
    ll = _U64(l)
    return (f // ll).astype(np.int64), (f % ll).astype(np.int64), nxt.astype(np.int64)


# -- chunk byte format ------------------------------------------------------


class ChunkBytes(NamedTuple):
    data: bytes
    count: int


def put_varint(out: bytearray, x: int) -> None:
    while x >= 0x80:
        out.append((x & 0x7F) | 0x80)
        x >>= 7
    out.append(x)


def compress_chunk(values: Sequence[int]) -> ChunkBytes:
    vals = list(values)
    if not vals:
        return ChunkBytes(b"", 0)
    d = [vals[0]]
    d += [b - a for a, b in zip(vals, vals[1:])]
    if vals[0] < 0 or (len(d) > 1 and min(d[1:]) <= 0):
        raise ContractViolation("chunk values must be strictly increasing")
    out = bytearray()
    put_varint(out, d[0])
    if len(d) > 1 and max(d[1:]) < 0x80:
        out += bytes(d[1:])
    else:
        for x in d[1:]:
            put_varint(out, x)
    return ChunkBytes(bytes(out), len(d))


def decompress_chunk(c: ChunkBytes) -> list[int]:
    data, count = c.data, c.count
    n = len(data)
    if count == 0:
        if n:
            raise CorruptChunk(f"{n} trailing bytes after 0 values")
        return []
    # first value may be wide; the rest are often one-byte deltas
    head = 0
    while head < n and data[head] >= 0x80:
        head += 1
    if head < n and n - head - 1 == count - 1 and (count == 1 or max(data[head + 1:]) < 0x80):
        first = 0
        for k in range(head, -1, -1):
            first = (first << 7) | (data[k] & 0x7F)
        return list(accumulate(data[head + 1:], initial=first))
    out = []
    acc = i = 0
    for _ in range(count):
        x = shift = 0
        while True:
            if i >= n:
                raise CorruptChunk("truncated varint stream")
            b = data[i]
            i += 1
            x |= (b & 0x7F) << shift
            if b < 0x80:
                break
            shift += 7
        acc += x
        out.append(acc)
    if i != n:
        raise CorruptChunk(f"{n - i} trailing bytes after {count} values")
    return out


# -- vectorized varints -----------------------------------------------------

_VARINT_LIMITS = [_U64(1 << (7 * k)) for k in range(1, 10)]
_DECODE_BLOCK = 1 << 22
_ENCODE_BLOCK = 1 << 18


def varint_lengths(v: np.ndarray) -> np.ndarray:
    n = np.ones(v.shape, dtype=np.int64)
    for lim in _VARINT_LIMITS:
        n += v >= lim
    return n


def encode_varints(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode each value; return the byte buffer and each value's start offset."""
    v = np.asarray(v, dtype=_U64)
    n = varint_lengths(v)
    ends = np.cumsum(n)
    starts = ends - n
    total = int(ends[-1]) if len(ends) else 0
    out = np.empty(total, dtype=np.uint8)
    for lo in range(0, len(v), _ENCODE_BLOCK):
        hi = min(len(v), lo + _ENCODE_BLOCK)
        nb = n[lo:hi]
        j = np.arange(int(nb.max()))
        groups = (v[lo:hi, None] >> (_U64(7) * j.astype(_U64))) & _U64(0x7F)
        groups = groups.astype(np.uint8)
        groups[j[None, :] < nb[:, None] - 1] |= 0x80
        out[starts[lo]:ends[hi - 1]] = groups[j[None, :] < nb[:, None]]
    return out, starts


def decode_varints(buf: np.ndarray | bytes) -> np.ndarray:
    """Decode a concatenation of complete varints into uint64 values."""
    if isinstance(buf, (bytes, bytearray, memoryview)):
        buf = np.frombuffer(buf, dtype=np.uint8)
    if buf.size == 0:
        return np.empty(0, dtype=_U64)
    if buf[-1] >= 0x80:
        raise CorruptChunk("truncated varint stream")
    ends = np.flatnonzero(buf < 0x80)
    pieces = []
    lo_val = 0
    # block over whole varints so the per-byte shift arrays stay small
    while lo_val < len(ends):
        hi_val = min(len(ends), lo_val + _DECODE_BLOCK // 4)
        b_lo = 0 if lo_val == 0 else int(ends[lo_val - 1]) + 1
        b_hi = int(ends[hi_val - 1]) + 1
        seg = buf[b_lo:b_hi]
        e = ends[lo_val:hi_val] - b_lo
        s = np.empty_like(e)
        s[0] = 0
        s[1:] = e[:-1] + 1
        lens = e - s + 1
        if lens.max() > 10:
            raise CorruptChunk("varint longer than 10 bytes")
        shift = (np.arange(seg.size, dtype=np.int64) - np.repeat(s, lens)) * 7
        vals = (seg & 0x7F).astype(_U64) << shift.astype(_U64)
        pieces.append(np.add.reduceat(vals, s))
        lo_val = hi_val
    return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)


def segmented_prefix_sum(deltas: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Undo delta encoding where each segment restarts from an absolute value.

    Wrapping uint64 arithmetic keeps the result exact modulo 2^64.
    """
    if deltas.size == 0:
        return deltas.astype(_U64)
    counts = np.asarray(counts, dtype=np.int64)
    counts = counts[counts > 0]
    cs = np.cumsum(deltas, dtype=_U64)
    starts = np.cumsum(counts) - counts
    base = cs[starts] - deltas[starts]
    return cs - np.repeat(base, counts)
