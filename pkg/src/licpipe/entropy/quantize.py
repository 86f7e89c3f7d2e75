"""Offset rounding between float latents and coder symbols."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from licpipe.entropy.cdf import CdfTable


@dataclass(eq=False)
class SymbolPlane:
    """Integer symbols plus the CDF row each one is coded under."""

    symbols: np.ndarray
    indexes: np.ndarray
    saturated: int = 0

    def __post_init__(self):
        if np.size(self.symbols) != np.size(self.indexes):
            raise ValueError(
                f"{np.size(self.symbols)} symbols but {np.size(self.indexes)} indexes")

    def validate(self, cdfs: CdfTable) -> None:
        s = np.ravel(self.symbols)
        i = np.ravel(self.indexes)
        if s.size and (s.min() < cdfs.support_min or s.max() > cdfs.support_max):
            raise ValueError("symbol outside table support")
        if i.size and (i.min() < 0 or i.max() >= cdfs.num_rows):
            raise IndexError("CDF row index out of range")

    def __eq__(self, other):
        if not isinstance(other, SymbolPlane):
            return NotImplemented
        return (np.array_equal(self.symbols, other.symbols)
                and np.array_equal(self.indexes, other.indexes))


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (float64 result).

    Works in float64 so ``|v| + 0.5`` is exact for every float32 input.
    """
    out = np.abs(v, dtype=np.float64)
    out += 0.5
    np.floor(out, out=out)
    np.copysign(out, v, out=out)
    return out


def channel_indexes(shape) -> np.ndarray:
    """Row selector for a (c, h, w) plane coded with one row per channel."""
    c, h, w = shape
    return np.repeat(np.arange(c, dtype=np.int32), h * w)


def quantize(y: np.ndarray, offsets, bound: int, out: Optional[np.ndarray] = None):
    """Quantize a (c, h, w) latent around per-channel offsets.

    Returns ``(y_hat, symbols, saturated)`` where ``symbols`` is an int32 array
    shaped like ``y`` holding ``round(y - offset)`` clamped to ``[-bound, bound]``,
    ``y_hat = symbols + offset`` (float32), and ``saturated`` counts clamped
    elements.  ``out`` optionally receives ``y_hat``.
    """
    offsets = np.asarray(offsets, dtype=np.float32)
    if offsets.shape != (y.shape[0],):
        raise ValueError(f"{offsets.size} offsets for {y.shape[0]} channels")
    centered = round_half_away(np.subtract(y, offsets[:, None, None], dtype=np.float32))
    saturated = int(np.count_nonzero(np.abs(centered) > bound))
    np.clip(centered, -bound, bound, out=centered)
    symbols = centered.astype(np.int32)
    y_hat = dequantize(symbols, offsets, out=out)
    return y_hat, symbols, saturated


def dequantize(symbols: np.ndarray, offsets, out: Optional[np.ndarray] = None) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.float32)
    if out is None:
        out = np.empty(symbols.shape, dtype=np.float32)
    np.add(symbols, offsets[:, None, None], out=out, dtype=np.float32)
    return out
