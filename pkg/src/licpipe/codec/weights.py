"""Model weights: layer layout, seeded generation, and the binary weight file.

Weight file (all integers little-endian)::

    "LICW" | version u8 = 1 | codec_kind u8 | activation u8 | N u16 | M u16 | L u16
    then parameter blocks, each: tag u8 | element count u32 | count x float32 LE

Block order: for every layer of g_a, g_s, then (hyperprior only) h_a and
h_s, the conv weights (tag 1, layout out x in x k x k) and bias (tag 2),
followed by beta (tag 3) and gamma (tag 4, row-major C x C) when the layer
is followed by a normalization.  Then bottleneck quantization offsets
(tag 16), density means (tag 17) and density scales (tag 18) for the
entropy-bottleneck latent (y for factorized, z for hyperprior), and finally
the Gaussian scale table (tag 19, hyperprior only).

The weights digest is the SHA-256 of the complete file bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from licpipe.codec.config import Activation, CodecConfig, CodecKind
from licpipe.entropy.cdf import default_scale_table, validate_scale_table
from licpipe.numerics import ConvWeights, NormWeights

MAGIC = b"LICW"
VERSION = 1
_HEADER = struct.Struct("<BBBHHH")
_BLOCK = struct.Struct("<BI")

TAG_CONV_W = 1
TAG_CONV_B = 2
TAG_BETA = 3
TAG_GAMMA = 4
TAG_OFFSETS = 16
TAG_MEANS = 17
TAG_SCALES = 18
TAG_SCALE_TABLE = 19

# with gain 1 the four-layer analysis shrinks every latent below 0.5 and all
# symbols quantize to zero; 3 keeps |y| at a few units without saturating L=32
INIT_GAIN = 3.0


class WeightFileError(ValueError):
    """Malformed weight file or a layer shape chain that does not line up."""


@dataclass(frozen=True)
class LayerSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: int
    transposed: bool = False
    output_padding: int = 0
    act: Optional[str] = None  # "norm", "inorm", "relu" or None


def architecture(kind: CodecKind, N: int, M: int) -> dict[str, list[LayerSpec]]:
    """Layer layout of every transform for the given codec shape."""
    down = lambda i, o, act: LayerSpec(i, o, 5, 2, 2, act=act)
    up = lambda i, o, act: LayerSpec(i, o, 5, 2, 2, True, 1, act)
    arch = {
        "g_a": [down(3, N, "norm"), down(N, N, "norm"), down(N, N, "norm"), down(N, M, None)],
        "g_s": [up(M, N, "inorm"), up(N, N, "inorm"), up(N, N, "inorm"), up(N, 3, None)],
    }
    if kind is CodecKind.HYPERPRIOR:
        arch["h_a"] = [LayerSpec(M, N, 3, 1, 1, act="relu"), down(N, N, "relu"),
                       down(N, N, None)]
        arch["h_s"] = [up(N, N, "relu"), up(N, N, "relu"),
                       LayerSpec(N, M, 3, 1, 1, True, 0, None)]
    return arch


@dataclass(frozen=True)
class Layer:
    spec: LayerSpec
    conv: ConvWeights
    norm: Optional[NormWeights] = None


@dataclass(frozen=True, eq=False)
class ModelWeights:
    kind: CodecKind
    activation: Activation
    N: int
    M: int
    support: int
    transforms: dict
    offsets: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    scale_table: Optional[np.ndarray]
    raw: bytes
    digest: bytes

    @property
    def digest_hex(self) -> str:
        return self.digest.hex()

    @property
    def bottleneck_channels(self) -> int:
        return self.M if self.kind is CodecKind.FACTORIZED else self.N

    def config(self, height: int = 256, width: int = 256) -> CodecConfig:
        return CodecConfig(self.kind, self.activation, self.N, self.M, height, width,
                           self.support)

    def check_config(self, cfg: CodecConfig) -> None:
        mine = (self.kind, self.activation, self.N, self.M, self.support)
        theirs = (cfg.kind, cfg.activation, cfg.N, cfg.M, cfg.support)
        if mine != theirs:
            raise ValueError(f"weights are {mine}, config asks for {theirs}")


def _blocks_for(kind: CodecKind, N: int, M: int):
    """Yield (tag, expected shape, where) in file order."""
    for name, layers in architecture(kind, N, M).items():
        for i, ls in enumerate(layers):
            yield TAG_CONV_W, (ls.out_ch, ls.in_ch, ls.kernel, ls.kernel), (name, i, "w")
            yield TAG_CONV_B, (ls.out_ch,), (name, i, "b")
            if ls.act in ("norm", "inorm"):
                yield TAG_BETA, (ls.out_ch,), (name, i, "beta")
                yield TAG_GAMMA, (ls.out_ch, ls.out_ch), (name, i, "gamma")
    c = M if kind is CodecKind.FACTORIZED else N
    yield TAG_OFFSETS, (c,), ("bottleneck", 0, "offsets")
    yield TAG_MEANS, (c,), ("bottleneck", 0, "means")
    yield TAG_SCALES, (c,), ("bottleneck", 0, "scales")
    if kind is CodecKind.HYPERPRIOR:
        yield TAG_SCALE_TABLE, None, ("bottleneck", 0, "scale_table")


def _assemble(kind, activation, N, M, support, arrays: dict, raw: bytes) -> ModelWeights:
    transforms = {}
    for name, layers in architecture(kind, N, M).items():
        built = []
        for i, ls in enumerate(layers):
            conv = ConvWeights(arrays[(name, i, "w")], arrays[(name, i, "b")], ls.stride)
            norm = None
            if ls.act in ("norm", "inorm"):
                try:
                    norm = NormWeights(arrays[(name, i, "beta")], arrays[(name, i, "gamma")])
                except ValueError as exc:
                    raise WeightFileError(f"{name}[{i}] normalization: {exc}") from None
            built.append(Layer(ls, conv, norm))
        transforms[name] = built
    scales = arrays[("bottleneck", 0, "scales")]
    if not np.all(scales > 0):
        raise WeightFileError("bottleneck density scales must be positive")
    table = None
    if kind is CodecKind.HYPERPRIOR:
        try:
            table = validate_scale_table(arrays[("bottleneck", 0, "scale_table")])
        except ValueError as exc:
            raise WeightFileError(str(exc)) from None
    frozen = {}
    for key in ("offsets", "means", "scales"):
        a = np.ascontiguousarray(arrays[("bottleneck", 0, key)], dtype=np.float32)
        a.setflags(write=False)
        frozen[key] = a
    return ModelWeights(kind, activation, N, M, support, transforms, frozen["offsets"],
                        frozen["means"], frozen["scales"], table, raw,
                        hashlib.sha256(raw).digest())


def _encode(kind, activation, N, M, support, arrays: dict) -> bytes:
    parts = [MAGIC, _HEADER.pack(VERSION, int(kind), int(activation), N, M, support)]
    for tag, shape, key in _blocks_for(kind, N, M):
        data = np.ascontiguousarray(arrays[key], dtype="<f4")
        if shape is not None and data.shape != shape:
            raise WeightFileError(f"{key}: shape {data.shape} != {shape}")
        parts.append(_BLOCK.pack(tag, data.size))
        parts.append(data.tobytes())
    return b"".join(parts)


def generate_weights(cfg: CodecConfig, seed: int = 42) -> ModelWeights:
    """Deterministic stand-in weights for a trained model of shape ``cfg``.

    Conv kernels are uniform in ``[-a, a]`` with ``a = INIT_GAIN * sqrt(1 / fan_in)``
    and zero bias; normalization layers start at beta = 1 with gamma = 0.1 on the
    diagonal and 0.1 / C off it; the bottleneck density is N(0, 1) with zero
    quantization offsets.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for tag, shape, key in _blocks_for(cfg.kind, cfg.N, cfg.M):
        if tag == TAG_CONV_W:
            a = INIT_GAIN * np.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
            arrays[key] = rng.uniform(-a, a, size=shape).astype(np.float32)
        elif tag == TAG_CONV_B:
            arrays[key] = np.zeros(shape, np.float32)
        elif tag == TAG_BETA:
            arrays[key] = np.ones(shape, np.float32)
        elif tag == TAG_GAMMA:
            c = shape[0]
            g = np.full(shape, 0.1 / c, np.float32)
            np.fill_diagonal(g, 0.1)
            arrays[key] = g
        elif tag in (TAG_OFFSETS, TAG_MEANS):
            arrays[key] = np.zeros(shape, np.float32)
        elif tag == TAG_SCALES:
            arrays[key] = np.ones(shape, np.float32)
        elif tag == TAG_SCALE_TABLE:
            arrays[key] = default_scale_table()
    raw = _encode(cfg.kind, cfg.activation, cfg.N, cfg.M, cfg.support, arrays)
    return weights_from_bytes(raw)


def weights_from_bytes(raw: bytes) -> ModelWeights:
    view = memoryview(raw)
    if len(raw) < 4 + _HEADER.size:
        raise WeightFileError("weight file shorter than its header")
    if bytes(view[:4]) != MAGIC:
        raise WeightFileError(f"bad magic {bytes(view[:4])!r}, expected {MAGIC!r}")
    version, kind, act, N, M, support = _HEADER.unpack_from(view, 4)
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    try:
        kind, act = CodecKind(kind), Activation(act)
    except ValueError as exc:
        raise WeightFileError(str(exc)) from None
    if N < 1 or M < 1 or support < 1:
        raise WeightFileError("header has a zero channel count or support bound")
    pos = 4 + _HEADER.size
    arrays = {}
    for tag, shape, key in _blocks_for(kind, N, M):
        if pos + _BLOCK.size > len(raw):
            raise WeightFileError(f"truncated before block {key}")
        got_tag, count = _BLOCK.unpack_from(view, pos)
        pos += _BLOCK.size
        if got_tag != tag:
            raise WeightFileError(f"block {key}: tag {got_tag}, expected {tag}")
        if shape is not None and count != int(np.prod(shape)):
            raise WeightFileError(
                f"block {key}: {count} elements, shape chain needs {int(np.prod(shape))}")
        end = pos + 4 * count
        if end > len(raw):
            raise WeightFileError(f"block {key} truncated: need {4 * count} bytes, "
                                  f"have {len(raw) - pos}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise WeightFileError(f"block {key} holds non-finite values")
        arrays[key] = data.reshape(shape) if shape is not None else data
        pos = end
    if pos != len(raw):
        raise WeightFileError(f"{len(raw) - pos} trailing bytes after the last block")
    return _assemble(kind, act, N, M, support, arrays, bytes(raw))


def save_weights(w: ModelWeights, path) -> None:
    Path(path).write_bytes(w.raw)


def load_weights(path) -> ModelWeights:
    return weights_from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
