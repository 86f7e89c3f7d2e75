"""Dense tensors and the neural-layer primitives used by the codec transforms.

Tensors are plain ``float32`` numpy arrays laid out channel-major as
``(channels, height, width)``.  Every op accepts an optional ``alloc``
callable ``alloc(shape) -> ndarray`` so callers can route working memory
through a :class:`~licpipe.pipeline.pool.BufferPool`; scratch buffers are
handed back through ``free`` before the op returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

Alloc = Callable[[tuple], np.ndarray]
Free = Callable[[np.ndarray], None]

DTYPE = np.float32


def _default_alloc(shape: tuple) -> np.ndarray:
    return np.empty(shape, dtype=DTYPE)


def _noop_free(arr: np.ndarray) -> None:
    pass


def tensor(data, channels: Optional[int] = None, height: Optional[int] = None,
           width: Optional[int] = None) -> np.ndarray:
    """Build a (c, h, w) float32 tensor, reshaping flat data if dims are given."""
    arr = np.asarray(data, dtype=DTYPE)
    if channels is not None:
        if arr.size != channels * height * width:
            raise ValueError(
                f"data length {arr.size} != {channels}x{height}x{width}")
        arr = arr.reshape(channels, height, width)
    if arr.ndim != 3:
        raise ValueError(f"tensor must be 3-D (c, h, w), got shape {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class ConvWeights:
    """Square-kernel convolution parameters, ``weights`` shaped (out, in, k, k)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=DTYPE)
        b = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"conv weights must be (out, in, k, k), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias length {b.size} != out_channels {w.shape[0]}")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class NormWeights:
    """GDN / 1DN parameters. Validity is checked once, here."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.ascontiguousarray(self.beta, dtype=DTYPE)
        gamma = np.ascontiguousarray(self.gamma, dtype=DTYPE)
        c = beta.shape[0] if beta.ndim == 1 else -1
        if beta.ndim != 1 or gamma.shape != (c, c):
            raise ValueError(
                f"norm weights need beta (C,) and gamma (C, C); got {beta.shape}, {gamma.shape}")
        if not np.all(beta > 0):
            raise ValueError("beta must be strictly positive")
        if not np.all(gamma >= 0):
            raise ValueError("gamma must be non-negative")
        beta.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def channels(self) -> int:
        return self.beta.shape[0]


def _check_channels(x: np.ndarray, expected: int, what: str) -> None:
    if x.ndim != 3:
        raise ValueError(f"expected a (c, h, w) tensor, got shape {x.shape}")
    if x.shape[0] != expected:
        raise ValueError(f"channel mismatch: input has {x.shape[0]}, {what} expects {expected}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def transpose_output_size(size: int, kernel: int, stride: int, padding: int,
                          output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def conv2d(x: np.ndarray, w: ConvWeights, padding: int = 0,
           alloc: Optional[Alloc] = None, free: Optional[Free] = None) -> np.ndarray:
    """Strided cross-correlation with zero padding (im2col + GEMM)."""
    _check_channels(x, w.in_channels, "conv")
    alloc = alloc or _default_alloc
    free = free or _noop_free
    c, h, wd = x.shape
    k, s = w.kernel, w.stride
    ho = conv_output_size(h, k, s, padding)
    wo = conv_output_size(wd, k, s, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive output size {ho}x{wo} for input {h}x{wd}, kernel {k}")

    if padding:
        padded = alloc((c, h + 2 * padding, wd + 2 * padding))
        padded[:, :padding, :] = 0
        padded[:, -padding:, :] = 0
        padded[:, :, :padding] = 0
        padded[:, :, -padding:] = 0
        padded[:, padding:padding + h, padding:padding + wd] = x
    else:
        padded = np.ascontiguousarray(x, dtype=DTYPE)

    sc, sh, sw = padded.strides
    windows = as_strided(padded, shape=(c, k, k, ho, wo),
                         strides=(sc, sh, sw, sh * s, sw * s), writeable=False)
    cols = alloc((c * k * k, ho * wo))
    np.copyto(cols.reshape(c, k, k, ho, wo), windows)
    if padding:
        free(padded)

    out = alloc((w.out_channels, ho, wo))
    np.matmul(w.weights.reshape(w.out_channels, -1), cols,
              out=out.reshape(w.out_channels, ho * wo))
    free(cols)
    out += w.bias[:, None, None]
    return out


def conv2d_transpose(x: np.ndarray, w: ConvWeights, padding: int = 0,
                     output_padding: int = 0, alloc: Optional[Alloc] = None,
                     free: Optional[Free] = None) -> np.ndarray:
    """Transposed convolution (the adjoint of :func:`conv2d`).

    ``w.weights`` is laid out (out, in, k, k) like a forward conv; each input
    pixel scatters a k x k patch into the output at ``stride`` spacing.
    ``output_padding`` extends the bottom/right edge so stride-2 layers can
    exactly double even sizes.
    """
    _check_channels(x, w.in_channels, "transposed conv")
    if not 0 <= output_padding <= padding:
        raise ValueError("output_padding must lie in [0, padding]")
    alloc = alloc or _default_alloc
    free = free or _noop_free
    c, h, wd = x.shape
    k, s, o = w.kernel, w.stride, w.out_channels
    ho = transpose_output_size(h, k, s, padding, output_padding)
    wo = transpose_output_size(wd, k, s, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive output size {ho}x{wo} for input {h}x{wd}, kernel {k}")

    # (o, k, k, c) @ (c, h*w) -> per-tap contributions
    wmat = w.weights.transpose(0, 2, 3, 1).reshape(o * k * k, c)
    cols = alloc((o * k * k, h * wd))
    np.matmul(wmat, x.reshape(c, h * wd), out=cols)
    taps = cols.reshape(o, k, k, h, wd)

    fh = (h - 1) * s + k
    fw = (wd - 1) * s + k
    full = alloc((o, fh, fw))
    full.fill(0)
    for i in range(k):
        for j in range(k):
            full[:, i:i + s * (h - 1) + 1:s, j:j + s * (wd - 1) + 1:s] += taps[:, i, j]
    free(cols)

    out = alloc((o, ho, wo))
    np.add(full[:, padding:padding + ho, padding:padding + wo], w.bias[:, None, None], out=out)
    free(full)
    return out


def _divisive(x: np.ndarray, nw: NormWeights, inverse: bool, squared: bool,
              alloc: Optional[Alloc], free: Optional[Free]) -> np.ndarray:
    _check_channels(x, nw.channels, "normalization")
    alloc = alloc or _default_alloc
    free = free or _noop_free
    c, h, wd = x.shape
    flat = x.reshape(c, h * wd)
    pooled = alloc((c, h * wd))
    if squared:
        np.square(flat, out=pooled)
    else:
        np.abs(flat, out=pooled)
    norm = alloc((c, h * wd))
    np.matmul(nw.gamma, pooled, out=norm)
    free(pooled)
    norm += nw.beta[:, None]
    if squared:
        np.sqrt(norm, out=norm)
    out = alloc((c, h, wd))
    if inverse:
        np.multiply(flat, norm, out=out.reshape(c, h * wd))
    else:
        np.divide(flat, norm, out=out.reshape(c, h * wd))
    free(norm)
    return out


def gdn(x: np.ndarray, nw: NormWeights, inverse: bool = False,
        alloc: Optional[Alloc] = None, free: Optional[Free] = None) -> np.ndarray:
    """Generalized divisive normalization.

    Forward: ``x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; ``inverse=True``
    multiplies by the same factor (evaluated on the input), which is the
    synthesis-side layer rather than an exact algebraic inverse.
    """
    return _divisive(x, nw, inverse, True, alloc, free)


def onedn(x: np.ndarray, nw: NormWeights, inverse: bool = False,
          alloc: Optional[Alloc] = None, free: Optional[Free] = None) -> np.ndarray:
    """Square-root-free variant: ``x_i / (beta_i + sum_j gamma_ij |x_j|)``."""
    return _divisive(x, nw, inverse, False, alloc, free)


def relu(x: np.ndarray) -> np.ndarray:
    """In-place rectification; returns ``x``."""
    np.maximum(x, 0, out=x)
    return x


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
