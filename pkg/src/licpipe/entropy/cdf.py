"""Quantized CDF tables for the factorized and scale-conditioned Gaussian models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from licpipe.entropy.rangecoder import PRECISION, TOTAL

DEFAULT_SUPPORT = 32
SCALE_MIN = 0.11
SCALE_MAX = 256.0
SCALE_LEVELS = 64


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Per-row cumulative frequencies over symbols ``support_min..support_max``.

    ``cdf`` has shape (rows, num_symbols + 1); every row starts at 0, ends at
    ``2**16`` and is strictly increasing.
    """

    cdf: np.ndarray
    support_min: int
    support_max: int
    precision: int = PRECISION

    def __post_init__(self):
        cdf = np.ascontiguousarray(self.cdf, dtype=np.uint32)
        if cdf.ndim != 2 or cdf.shape[1] != self.support_max - self.support_min + 2:
            raise ValueError(f"cdf shape {cdf.shape} does not match support "
                             f"[{self.support_min}, {self.support_max}]")
        if np.any(cdf[:, 0] != 0) or np.any(cdf[:, -1] != TOTAL):
            raise ValueError("every CDF row must start at 0 and end at 2**16")
        if np.any(np.diff(cdf.astype(np.int64), axis=1) < 1):
            raise ValueError("CDF rows must be strictly increasing")
        cdf.setflags(write=False)
        object.__setattr__(self, "cdf", cdf)

    @property
    def num_rows(self) -> int:
        return self.cdf.shape[0]

    @property
    def num_symbols(self) -> int:
        return self.cdf.shape[1] - 1

    def frequencies(self) -> np.ndarray:
        return np.diff(self.cdf.astype(np.int64), axis=1)

    def probabilities(self) -> np.ndarray:
        return self.frequencies() / TOTAL

    def cross_entropy_bits(self, symbols, indexes) -> float:
        """Ideal code length of ``symbols`` under their rows, in bits."""
        freqs = self.frequencies()
        f = freqs[np.ravel(indexes), np.ravel(symbols) - self.support_min]
        return float(np.sum(PRECISION - np.log2(f)))


def default_scale_table() -> np.ndarray:
    """64 log-spaced scales from 0.11 to 256 inclusive."""
    table = np.exp(np.linspace(np.log(SCALE_MIN), np.log(SCALE_MAX), SCALE_LEVELS))
    table[0], table[-1] = SCALE_MIN, SCALE_MAX
    return table.astype(np.float32)


def validate_scale_table(table) -> np.ndarray:
    t = np.asarray(table, dtype=np.float32)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("scale table must be a non-empty 1-D array")
    if not np.all(t > 0) or not np.all(np.diff(t) > 0):
        raise ValueError("scale table must be strictly increasing and positive")
    return t


def _upper_tail(x):
    # P(N(0,1) > x), evaluated so that mirrored arguments give identical floats
    return 0.5 * erfc(x / np.sqrt(2.0))


def gaussian_bin_masses(mean, scale, bound: int) -> np.ndarray:
    """Integer-bin probabilities on [-bound, bound] with tails folded into the edges.

    ``mean`` and ``scale`` broadcast over rows; returns (rows, 2*bound + 1)
    float64 masses that sum to 1 per row.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))[:, None]
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))[:, None]
    k = np.arange(-bound, bound + 1, dtype=np.float64)[None, :]
    d = k - mean
    # mass of [d - 0.5, d + 0.5]; use the tail on the side away from the mode
    upper = (d - 0.5) / scale
    lower = (d + 0.5) / scale
    right = _upper_tail(upper) - _upper_tail(lower)
    left = _upper_tail(-lower) - _upper_tail(-upper)
    masses = np.where(d > 0, right, np.where(d < 0, left, 1.0 - _upper_tail(lower) - _upper_tail(-upper)))
    # fold tails into the edge bins
    masses[:, 0] = _upper_tail(-lower[:, 0])
    masses[:, -1] = _upper_tail(upper[:, -1])
    return np.clip(masses, 0.0, 1.0)


def quantize_masses(masses: np.ndarray) -> np.ndarray:
    """Turn probability rows into frequency rows summing to exactly 2**16.

    Each bin gets a floor of 1; the remaining ``2**16 - n`` units are
    apportioned by largest remainder, at most one extra unit per bin, so every
    frequency lies within 1 of its ideal ``1 + p * (2**16 - n)``.  Rows that
    are mirror images of themselves are apportioned in mirrored pairs (the
    centre bin takes an odd unit) and so stay exactly symmetric.
    """
    masses = np.atleast_2d(masses)
    rows, n = masses.shape
    budget = TOTAL - n
    if budget < 0:
        raise ValueError(f"{n} symbols cannot fit a 16-bit table")
    out = np.empty((rows, n), dtype=np.int64)
    for r in range(rows):
        p = masses[r] / masses[r].sum()
        ideal = p * budget
        base = np.floor(ideal).astype(np.int64)
        rem = ideal - base
        left = budget - int(base.sum())
        half = n // 2
        if np.array_equal(p, p[::-1]) and (n % 2 == 1 or left % 2 == 0):
            centre = n % 2 == 1 and left % 2 == 1
            pairs = np.argsort(-rem[:half], kind="stable")[:(left - centre) // 2]
            base[pairs] += 1
            base[n - 1 - pairs] += 1
            if centre:
                base[half] += 1
        else:
            base[np.argsort(-rem, kind="stable")[:left]] += 1
        out[r] = base + 1
    return out


def _table_from_freqs(freqs: np.ndarray, bound: int) -> CdfTable:
    cdf = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.uint32)
    np.cumsum(freqs, axis=1, out=cdf[:, 1:])
    return CdfTable(cdf, -bound, bound)


def build_factorized_cdf(means, scales, support_bound: int = DEFAULT_SUPPORT) -> CdfTable:
    """One discretized-Gaussian row per channel, parameterized by (mean, scale)."""
    means = np.asarray(means, dtype=np.float64).ravel()
    scales = np.asarray(scales, dtype=np.float64).ravel()
    if means.shape != scales.shape:
        raise ValueError("means and scales must have one entry per channel")
    if support_bound < 1:
        raise ValueError("support bound must be >= 1")
    if not np.all(scales > 0):
        raise ValueError("scales must be strictly positive")
    return _table_from_freqs(quantize_masses(gaussian_bin_masses(means, scales, support_bound)),
                             support_bound)


def build_gaussian_conditional_cdf(scale_table, support_bound: int = DEFAULT_SUPPORT) -> CdfTable:
    """One zero-mean row per scale-table entry."""
    table = validate_scale_table(scale_table)
    return build_factorized_cdf(np.zeros(table.size), table.astype(np.float64), support_bound)


def scale_to_index(scales, table) -> np.ndarray:
    """Number of table entries strictly below each scale, clamped to the last row."""
    table = np.asarray(table)
    idx = np.searchsorted(table, np.asarray(scales, dtype=table.dtype), side="left")
    return np.minimum(idx, table.size - 1).astype(np.int32)
