"""Factorized-prior and scale-hyperprior codecs.

Each codec exposes its encode/decode paths as separable sub-operations so a
pipeline can place them on different stages:

* factorized encoder: ``analyze`` (g_a) -> ``code`` (quantize + range code)
* factorized decoder: ``entropy_decode`` -> ``synthesize`` (g_s)
* hyperprior encoder: ``analyze`` (g_a, h_a, quantize z, h_s) -> ``code``
* hyperprior decoder: ``decode_z`` -> ``predict_scales`` (h_s) ->
  ``decode_y`` -> ``synthesize`` (g_s)

Intermediate tensors come from the codec's :class:`BufferPool` (when one is
attached) and are released by whichever sub-operation consumes them last.
The monolithic ``encode`` / ``decode`` methods are the serial composition of
the same sub-operations.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from licpipe import numerics
from licpipe.codec.config import Activation, CodecConfig, CodecKind
from licpipe.codec.frame import EncodedFrame
from licpipe.codec.weights import Layer, ModelWeights
from licpipe.entropy import (
    build_factorized_cdf,
    build_gaussian_conditional_cdf,
    channel_indexes,
    dequantize,
    quantize,
    range_decode,
    range_encode,
    scale_to_index,
)
from licpipe.pipeline.core import StageSpec, pooled, serialized
from licpipe.pipeline.pool import BufferPool


class DigestMismatch(ValueError):
    """Frame was produced with different model weights."""


class GeometryError(ValueError):
    pass


def latent_digest(*arrays: Optional[np.ndarray]) -> str:
    """SHA-256 over the raw float32 bytes of the given latents (None skipped)."""
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return h.hexdigest()


@dataclass
class HyperLatents:
    """Output of the hyperprior analysis stage."""

    y: np.ndarray
    z_hat: np.ndarray
    z_symbols: np.ndarray
    sigma: np.ndarray
    saturated: int = 0


@dataclass
class DecodeState:
    """Payload carried between the hyperprior decoder stages."""

    frame: EncodedFrame
    z_hat: Optional[np.ndarray] = None
    indexes: Optional[np.ndarray] = None
    y_hat: Optional[np.ndarray] = None
    latents: dict = field(default_factory=dict)


@dataclass
class Decoded:
    """Reconstructed image plus encoder-comparable latents when requested."""

    image: np.ndarray
    sequence: int = 0
    latents: dict = field(default_factory=dict)

    @property
    def latent_digest(self) -> str:
        return latent_digest(self.latents.get("y_hat"), self.latents.get("z_hat"))


class _Codec:
    kind: CodecKind

    def __init__(self, weights: ModelWeights, cfg: CodecConfig,
                 pool: Optional[BufferPool] = None, keep_latents: bool = False):
        if weights.kind is not self.kind:
            raise ValueError(f"{type(self).__name__} needs {self.kind.label} weights")
        weights.check_config(cfg)
        self.weights = weights
        self.cfg = cfg
        self.pool = pool
        self.keep_latents = keep_latents
        self.saturated = 0
        self._sat_lock = threading.Lock()
        norm = numerics.gdn if weights.activation is Activation.GDN else numerics.onedn
        self._norm = norm
        if pool is not None:
            self._alloc = pool.array
            self._free = pool.release
        else:
            self._alloc = lambda shape: np.empty(shape, dtype=np.float32)
            self._free = lambda arr: None

    # -- transforms ----------------------------------------------------
    def _run(self, x: np.ndarray, layers: list[Layer], owns_input: bool) -> np.ndarray:
        alloc, free = self._alloc, self._free
        for layer in layers:
            ls = layer.spec
            if ls.transposed:
                out = numerics.conv2d_transpose(x, layer.conv, ls.padding, ls.output_padding,
                                                alloc=alloc, free=free)
            else:
                out = numerics.conv2d(x, layer.conv, ls.padding, alloc=alloc, free=free)
            if owns_input:
                free(x)
            owns_input = True
            if ls.act == "relu":
                numerics.relu(out)
            elif ls.act in ("norm", "inorm"):
                normed = self._norm(out, layer.norm, inverse=ls.act == "inorm",
                                    alloc=alloc, free=free)
                free(out)
                out = normed
            x = out
        return x

    def _check_input(self, x: np.ndarray) -> None:
        want = (3, self.cfg.height, self.cfg.width)
        if x.shape != want:
            raise GeometryError(f"input shape {x.shape} != configured {want}")

    def _check_frame(self, f: EncodedFrame) -> None:
        if f.weights_digest is not None and f.weights_digest != self.weights.digest:
            raise DigestMismatch(
                f"frame {f.sequence} was encoded with weights {f.weights_digest.hex()[:16]}..., "
                f"decoder has {self.weights.digest_hex[:16]}...")
        if f.kind is not self.kind:
            raise ValueError(f"{f.kind.label} frame given to {self.kind.label} decoder")
        if (f.height, f.width) != (self.cfg.height, self.cfg.width):
            raise GeometryError(f"frame is {f.height}x{f.width}, decoder configured for "
                                f"{self.cfg.height}x{self.cfg.width}")

    def synthesize(self, y_hat: np.ndarray, owns_input: bool = True) -> np.ndarray:
        """g_s(y_hat) clamped to [0, 1]; releases ``y_hat`` when it is pool-owned."""
        x_hat = self._run(y_hat, self.weights.transforms["g_s"], owns_input)
        np.clip(x_hat, 0.0, 1.0, out=x_hat)
        return x_hat

    @property
    def _image_shape(self) -> tuple[int, int, int]:
        return (3, self.cfg.height, self.cfg.width)

    def _count_saturated(self, n: int) -> None:
        with self._sat_lock:
            self.saturated += n

    def release(self, arr: np.ndarray) -> None:
        self._free(arr)

    def _provision(self, stages: list[StageSpec], per_task) -> list[StageSpec]:
        """Reserve the pooled buffers that travel between ``stages``.

        A live task is either queued at one stage or held by one executor, so
        at most ``sum(workers + queue_capacity)`` tasks exist at once.  Each
        ``(shape, n)`` in ``per_task`` is a buffer shape a task carries ``n``
        of; executors may also hold up to two scratch buffers of a coinciding
        size, and the consumer holds one output.  Reserving that many up front
        makes the steady state allocation-free regardless of scheduling.
        """
        if self.pool is None:
            return stages
        bound = sum(s.workers + s.queue_capacity for s in stages)
        slack = 2 * sum(s.workers for s in stages) + 1
        need: dict[int, int] = {}
        for shape, n in per_task:
            nbytes = int(np.prod(shape)) * 4
            need[nbytes] = need.get(nbytes, 0) + n * bound
        for nbytes, count in need.items():
            self.pool.reserve(nbytes, count + slack)
        return stages

    def _detach(self, arr: np.ndarray) -> np.ndarray:
        out = np.array(arr, copy=True)
        self._free(arr)
        return out

    # -- monolithic paths ------------------------------------------------
    def encode(self, x: np.ndarray, sequence: int = 0) -> EncodedFrame:
        f = self.code(self.analyze(x))
        f.sequence = sequence
        return f


class FactorizedCodec(_Codec):
    kind = CodecKind.FACTORIZED

    def __init__(self, weights, cfg, pool=None, keep_latents=False):
        super().__init__(weights, cfg, pool, keep_latents)
        self.cdf = build_factorized_cdf(weights.means, weights.scales, cfg.support)
        self._indexes = channel_indexes(cfg.latent_shape)

    def analyze(self, x: np.ndarray) -> np.ndarray:
        """g_a(x); the result is pool-owned."""
        self._check_input(x)
        return self._run(np.asarray(x, dtype=np.float32), self.weights.transforms["g_a"],
                         owns_input=False)

    def code(self, y: np.ndarray) -> EncodedFrame:
        """Quantize around the channel offsets and range code; releases ``y``."""
        y_hat = self._alloc(y.shape)
        y_hat, symbols, sat = quantize(y, self.weights.offsets, self.cfg.support, out=y_hat)
        self._free(y)
        self._count_saturated(sat)
        data = range_encode(symbols, self._indexes, self.cdf)
        f = EncodedFrame(self.kind, self.cfg.height, self.cfg.width, data,
                         weights_digest=self.weights.digest)
        if self.keep_latents:
            f.latents = {"y_hat": y_hat.copy(), "saturated": sat}
        self._free(y_hat)
        return f

    def entropy_decode(self, f: EncodedFrame) -> np.ndarray:
        """Recover y_hat (pool-owned) from the y string."""
        self._check_frame(f)
        symbols = range_decode(f.y_string, self._indexes, self.cdf)
        y_hat = self._alloc(self.cfg.latent_shape)
        return dequantize(symbols.reshape(self.cfg.latent_shape), self.weights.offsets, out=y_hat)

    def decode(self, f: EncodedFrame) -> np.ndarray:
        return self._detach(self.synthesize(self.entropy_decode(f)))

    def decode_with_latents(self, f: EncodedFrame) -> Decoded:
        y_hat = self.entropy_decode(f)
        latents = {"y_hat": y_hat.copy()}
        return Decoded(self._detach(self.synthesize(y_hat)), f.sequence, latents)

    # -- stage decompositions ------------------------------------------
    def encoder_stages(self, entropy_workers: int = 3, queue_capacity: int = 4) -> list[StageSpec]:
        stages = [serialized("transform", self.analyze, queue_capacity),
                  pooled("entropy", self.code, entropy_workers, queue_capacity)]
        return self._provision(stages, [(self.cfg.latent_shape, 1)])

    def decoder_stages(self, entropy_workers: int = 3, queue_capacity: int = 4) -> list[StageSpec]:
        def cpu(f: EncodedFrame) -> DecodeState:
            st = DecodeState(f)
            st.y_hat = self.entropy_decode(f)
            if self.keep_latents:
                st.latents["y_hat"] = st.y_hat.copy()
            return st

        def gpu(st: DecodeState) -> Decoded:
            return Decoded(self.synthesize(st.y_hat), st.frame.sequence, st.latents)

        stages = [pooled("entropy", cpu, entropy_workers, queue_capacity),
                  serialized("synthesis", gpu, queue_capacity)]
        return self._provision(stages, [(self.cfg.latent_shape, 1), (self._image_shape, 1)])


class HyperpriorCodec(_Codec):
    kind = CodecKind.HYPERPRIOR

    def __init__(self, weights, cfg, pool=None, keep_latents=False):
        super().__init__(weights, cfg, pool, keep_latents)
        self.z_cdf = build_factorized_cdf(weights.means, weights.scales, cfg.support)
        self.y_cdf = build_gaussian_conditional_cdf(weights.scale_table, cfg.support)
        self.scale_floor = np.float32(weights.scale_table[0])
        self._z_indexes = channel_indexes(cfg.hyper_shape)
        self._zero_offsets = np.zeros(cfg.M, dtype=np.float32)

    def _scales(self, z_hat: np.ndarray, owns_input: bool) -> np.ndarray:
        sigma = self._run(z_hat, self.weights.transforms["h_s"], owns_input)
        np.maximum(sigma, self.scale_floor, out=sigma)
        return sigma

    def analyze(self, x: np.ndarray) -> HyperLatents:
        """g_a, h_a on |y|, quantize z and h_s: the accelerator-side segment."""
        self._check_input(x)
        y = self._run(np.asarray(x, dtype=np.float32), self.weights.transforms["g_a"],
                      owns_input=False)
        y_abs = self._alloc(y.shape)
        np.abs(y, out=y_abs)
        z = self._run(y_abs, self.weights.transforms["h_a"], owns_input=True)
        z_hat = self._alloc(z.shape)
        z_hat, z_symbols, sat = quantize(z, self.weights.offsets, self.cfg.support, out=z_hat)
        self._free(z)
        sigma = self._scales(z_hat, owns_input=False)
        return HyperLatents(y, z_hat, z_symbols, sigma, sat)

    def code(self, h: HyperLatents) -> EncodedFrame:
        """Quantize y (zero mean), pick scale rows, range code y and z."""
        y_hat = self._alloc(h.y.shape)
        y_hat, y_symbols, sat = quantize(h.y, self._zero_offsets, self.cfg.support, out=y_hat)
        self._count_saturated(sat + h.saturated)
        indexes = scale_to_index(h.sigma, self.weights.scale_table)
        y_string = range_encode(y_symbols, indexes, self.y_cdf)
        z_string = range_encode(h.z_symbols, self._z_indexes, self.z_cdf)
        f = EncodedFrame(self.kind, self.cfg.height, self.cfg.width, y_string, z_string,
                         weights_digest=self.weights.digest)
        if self.keep_latents:
            f.latents = {"y_hat": y_hat.copy(), "z_hat": h.z_hat.copy(),
                         "saturated": sat + h.saturated}
        for arr in (h.y, h.z_hat, h.sigma, y_hat):
            self._free(arr)
        return f

    # decoder sub-operations, in stage order
    def decode_z(self, f: EncodedFrame) -> DecodeState:
        """CPU1: entropy-decode the z string into z_hat (pool-owned)."""
        self._check_frame(f)
        symbols = range_decode(f.z_string, self._z_indexes, self.z_cdf)
        z_hat = self._alloc(self.cfg.hyper_shape)
        dequantize(symbols.reshape(self.cfg.hyper_shape), self.weights.offsets, out=z_hat)
        st = DecodeState(f, z_hat=z_hat)
        if self.keep_latents:
            st.latents["z_hat"] = z_hat.copy()
        return st

    def predict_scales(self, st: DecodeState) -> DecodeState:
        """GPU1: sigma = h_s(z_hat), mapped to scale-table rows."""
        sigma = self._scales(st.z_hat, owns_input=True)
        st.z_hat = None
        st.indexes = scale_to_index(sigma, self.weights.scale_table)
        self._free(sigma)
        return st

    def decode_y(self, st: DecodeState) -> DecodeState:
        """CPU2: entropy-decode the y string under the predicted scales."""
        symbols = range_decode(st.frame.y_string, st.indexes, self.y_cdf)
        st.indexes = None
        y_hat = self._alloc(self.cfg.latent_shape)
        st.y_hat = dequantize(symbols.reshape(self.cfg.latent_shape), self._zero_offsets,
                              out=y_hat)
        if self.keep_latents:
            st.latents["y_hat"] = st.y_hat.copy()
        return st

    def reconstruct(self, st: DecodeState) -> Decoded:
        """GPU2: x_hat = g_s(y_hat)."""
        x_hat = self.synthesize(st.y_hat)
        st.y_hat = None
        return Decoded(x_hat, st.frame.sequence, st.latents)

    def decode(self, f: EncodedFrame) -> np.ndarray:
        d = self.reconstruct(self.decode_y(self.predict_scales(self.decode_z(f))))
        return self._detach(d.image)

    def decode_with_latents(self, f: EncodedFrame) -> Decoded:
        keep, self.keep_latents = self.keep_latents, True
        try:
            d = self.reconstruct(self.decode_y(self.predict_scales(self.decode_z(f))))
        finally:
            self.keep_latents = keep
        d.image = self._detach(d.image)
        return d

    def encoder_stages(self, entropy_workers: int = 3, queue_capacity: int = 4) -> list[StageSpec]:
        stages = [serialized("transform", self.analyze, queue_capacity),
                  pooled("entropy", self.code, entropy_workers, queue_capacity)]
        # y and sigma are latent-shaped, z_hat hyper-shaped
        return self._provision(stages, [(self.cfg.latent_shape, 2), (self.cfg.hyper_shape, 1)])

    def decoder_stages(self, entropy_workers: int = 3, queue_capacity: int = 4) -> list[StageSpec]:
        stages = [pooled("cpu1", self.decode_z, entropy_workers, queue_capacity),
                  serialized("gpu1", self.predict_scales, queue_capacity),
                  pooled("cpu2", self.decode_y, entropy_workers, queue_capacity),
                  serialized("gpu2", self.reconstruct, queue_capacity)]
        return self._provision(stages, [(self.cfg.hyper_shape, 1), (self.cfg.latent_shape, 1),
                                        (self._image_shape, 1)])


def make_codec(weights: ModelWeights, cfg: Optional[CodecConfig] = None,
               pool: Optional[BufferPool] = None, keep_latents: bool = False) -> _Codec:
    cfg = cfg or weights.config()
    cls = FactorizedCodec if weights.kind is CodecKind.FACTORIZED else HyperpriorCodec
    return cls(weights, cfg, pool, keep_latents)


def factorized_encode(x, w: ModelWeights, cfg: CodecConfig) -> EncodedFrame:
    return FactorizedCodec(w, cfg).encode(x)


def factorized_decode(f: EncodedFrame, w: ModelWeights, cfg: CodecConfig) -> np.ndarray:
    return FactorizedCodec(w, cfg).decode(f)


def hyper_encode(x, w: ModelWeights, cfg: CodecConfig) -> EncodedFrame:
    return HyperpriorCodec(w, cfg).encode(x)


def hyper_decode(f: EncodedFrame, w: ModelWeights, cfg: CodecConfig) -> np.ndarray:
    return HyperpriorCodec(w, cfg).decode(f)
