"""Quantization, CDF construction and range coding."""

from licpipe.entropy.cdf import (
    DEFAULT_SUPPORT,
    CdfTable,
    build_factorized_cdf,
    build_gaussian_conditional_cdf,
    default_scale_table,
    gaussian_bin_masses,
    scale_to_index,
)
from licpipe.entropy.quantize import SymbolPlane, channel_indexes, dequantize, quantize
from licpipe.entropy.rangecoder import CorruptStreamError, range_decode, range_encode

__all__ = [
    "DEFAULT_SUPPORT",
    "CdfTable",
    "CorruptStreamError",
    "SymbolPlane",
    "build_factorized_cdf",
    "build_gaussian_conditional_cdf",
    "channel_indexes",
    "default_scale_table",
    "dequantize",
    "gaussian_bin_masses",
    "quantize",
    "range_decode",
    "range_encode",
    "scale_to_index",
]
