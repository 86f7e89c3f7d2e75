"""Factorized-prior and scale-hyperprior codecs, frame container and weight files."""

from licpipe.codec.config import Activation, CodecConfig, CodecKind
from licpipe.codec.frame import EncodedFrame, FrameFormatError, parse_frame, serialize_frame
from licpipe.codec.model import (
    Decoded,
    DecodeState,
    DigestMismatch,
    FactorizedCodec,
    GeometryError,
    HyperLatents,
    HyperpriorCodec,
    factorized_decode,
    factorized_encode,
    hyper_decode,
    hyper_encode,
    latent_digest,
    make_codec,
)
from licpipe.codec.weights import (
    ModelWeights,
    WeightFileError,
    architecture,
    generate_weights,
    load_weights,
    save_weights,
    weights_from_bytes,
)

__all__ = [
    "Activation",
    "CodecConfig",
    "CodecKind",
    "DecodeState",
    "Decoded",
    "DigestMismatch",
    "EncodedFrame",
    "FactorizedCodec",
    "FrameFormatError",
    "GeometryError",
    "HyperLatents",
    "HyperpriorCodec",
    "ModelWeights",
    "WeightFileError",
    "architecture",
    "factorized_decode",
    "factorized_encode",
    "generate_weights",
    "hyper_decode",
    "hyper_encode",
    "latent_digest",
    "load_weights",
    "make_codec",
    "parse_frame",
    "save_weights",
    "serialize_frame",
    "weights_from_bytes",
]
