"""Byte-renormalizing range coder over 16-bit cumulative frequency tables.

State is a 32-bit range plus a low register with one carry bit; pending
0xFF bytes are tracked LZMA-style (cache + run length) so carries never need
to touch bytes that were already emitted.  Interval bounds are computed as
``(range * cum) >> 16`` rather than ``(range >> 16) * cum``, which keeps the
per-symbol coding loss near zero even for skewed tables.

Stream layout: one leading byte (always 0), one byte per renormalization
shift, then four flush bytes.  The decoder consumes exactly the bytes the
encoder produced, so any truncation is detected; a non-zero leading byte,
unconsumed trailing bytes or a final code that does not land exactly on
the flushed interval base are reported as corruption too.  Damage that happens to leave all of these
consistent decodes to wrong symbols (there is no checksum).

The kernels are numba-compiled with ``nogil=True`` so several coder
instances can genuinely run in parallel on worker threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit

PRECISION = 16
TOTAL = 1 << PRECISION

# decoder status codes
_OK = 0
_EXHAUSTED = 1
_BAD_FREQ = 2
_INCONSISTENT = 3


class CorruptStreamError(ValueError):
    """The byte string cannot be decoded under the given tables."""


@njit(cache=True, nogil=True)
def _encode_kernel(symbols, indexes, cdf, out):
    # symbols are already shifted to [0, nsym); cdf rows are uint32
    low = np.uint64(0)
    rng = np.uint64(0xFFFFFFFF)
    cache = np.uint64(0)
    cache_size = 1
    pos = 0
    top = np.uint64(1 << 24)
    n = symbols.shape[0]
    for t in range(n + 5):
        if t < n:
            s = symbols[t]
            row = indexes[t]
            lo = (rng * np.uint64(cdf[row, s])) >> np.uint64(16)
            hi = (rng * np.uint64(cdf[row, s + 1])) >> np.uint64(16)
            low += lo
            rng = hi - lo
            shifts = 0
            while rng < top:
                rng = rng << np.uint64(8)
                shifts += 1
        else:
            shifts = 1
        for _ in range(shifts):
            if low < np.uint64(0xFF000000) or low >= np.uint64(0x100000000):
                carry = low >> np.uint64(32)
                temp = cache
                while cache_size > 0:
                    out[pos] = np.uint8((temp + carry) & np.uint64(0xFF))
                    pos += 1
                    temp = np.uint64(0xFF)
                    cache_size -= 1
                cache = (low >> np.uint64(24)) & np.uint64(0xFF)
            cache_size += 1
            low = (low & np.uint64(0x00FFFFFF)) << np.uint64(8)
    return pos


@njit(cache=True, nogil=True)
def _decode_kernel(data, indexes, cdf, out):
    n = indexes.shape[0]
    nsym = cdf.shape[1] - 1
    size = data.shape[0]
    if size < 5:
        return _EXHAUSTED, 0
    if data[0] != 0:
        return _INCONSISTENT, 0
    code = np.uint64(0)
    for i in range(1, 5):
        code = (code << np.uint64(8)) | np.uint64(data[i])
    pos = 5
    rng = np.uint64(0xFFFFFFFF)
    top = np.uint64(1 << 24)
    for t in range(n):
        row = indexes[t]
        target = (((code + np.uint64(1)) << np.uint64(16)) - np.uint64(1)) // rng
        if target >= np.uint64(65536):
            return _BAD_FREQ, t
        # largest s with cdf[row, s] <= target
        a = 0
        b = nsym
        while b - a > 1:
            m = (a + b) >> 1
            if np.uint64(cdf[row, m]) <= target:
                a = m
            else:
                b = m
        s = a
        lo = (rng * np.uint64(cdf[row, s])) >> np.uint64(16)
        hi = (rng * np.uint64(cdf[row, s + 1])) >> np.uint64(16)
        code -= lo
        rng = hi - lo
        while rng < top:
            if pos >= size:
                return _EXHAUSTED, t
            code = ((code << np.uint64(8)) | np.uint64(data[pos])) & np.uint64(0xFFFFFFFF)
            rng = rng << np.uint64(8)
            pos += 1
        out[t] = s
    # the flush writes low itself, so a valid stream ends exactly on it, fully consumed
    if code != np.uint64(0) or pos != size:
        return _INCONSISTENT, n
    return _OK, pos


def _prepare(indexes, cdfs) -> np.ndarray:
    idx = np.ascontiguousarray(indexes, dtype=np.int32)
    if idx.size and (idx.min() < 0 or idx.max() >= cdfs.num_rows):
        bad = int(idx[(idx < 0) | (idx >= cdfs.num_rows)][0])
        raise IndexError(f"CDF row index {bad} out of range [0, {cdfs.num_rows})")
    return idx


def range_encode(symbols, indexes, cdfs) -> bytes:
    """Encode ``symbols[i]`` under CDF row ``indexes[i]`` of ``cdfs``."""
    sym = np.ascontiguousarray(symbols, dtype=np.int32).ravel()
    idx = _prepare(np.ravel(indexes), cdfs)
    if sym.shape != idx.shape:
        raise ValueError(f"{sym.size} symbols but {idx.size} indexes")
    shifted = sym - np.int32(cdfs.support_min)
    if shifted.size and (shifted.min() < 0 or shifted.max() >= cdfs.num_symbols):
        bad = sym[(shifted < 0) | (shifted >= cdfs.num_symbols)][0]
        raise ValueError(
            f"symbol {int(bad)} outside support [{cdfs.support_min}, {cdfs.support_max}]")
    # each symbol emits at most 3 bytes (range >= 2^8 after narrowing)
    out = np.empty(3 * sym.size + 8, dtype=np.uint8)
    n = _encode_kernel(shifted, idx, cdfs.cdf, out)
    return out[:n].tobytes()


def range_decode(data: bytes, indexes, cdfs) -> np.ndarray:
    """Recover the symbols encoded by :func:`range_encode` (int32 array)."""
    idx = _prepare(np.ravel(indexes), cdfs)
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.empty(idx.size, dtype=np.int32)
    status, where = _decode_kernel(buf, idx, cdfs.cdf, out)
    if status == _EXHAUSTED:
        raise CorruptStreamError(
            f"byte string exhausted at symbol {where} of {idx.size} ({len(data)} bytes)")
    if status == _BAD_FREQ:
        raise CorruptStreamError(f"decoded frequency outside table at symbol {where}")
    if status == _INCONSISTENT:
        raise CorruptStreamError(
            "leading byte, final coder state or length inconsistent with a valid stream")
    out += np.int32(cdfs.support_min)
    return out
