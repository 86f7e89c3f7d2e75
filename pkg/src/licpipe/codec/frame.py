"""Encoded frame container.

Layout (little-endian)::

    "LICF" | version u8 = 1 | codec_kind u8 | height u16 | width u16
           | y_len u32 | z_len u32 | y bytes | z bytes

``z_len`` is 0 for factorized frames.  The container does not carry the
frame sequence number; the stream layer transports it alongside.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Optional

from licpipe.codec.config import CodecKind

MAGIC = b"LICF"
VERSION = 1
_HEADER = struct.Struct("<4sBBHHII")
HEADER_SIZE = _HEADER.size
_U32_MAX = 0xFFFFFFFF


class FrameFormatError(ValueError):
    """Bytes that are not a well-formed frame container."""


@dataclass
class EncodedFrame:
    kind: CodecKind
    height: int
    width: int
    y_string: bytes
    z_string: Optional[bytes] = None
    sequence: int = 0
    # side information, never serialized
    weights_digest: Optional[bytes] = field(default=None, compare=False, repr=False)
    latents: Optional[dict] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.kind = CodecKind(self.kind)
        if (self.z_string is not None) != (self.kind is CodecKind.HYPERPRIOR):
            raise ValueError("z_string must be present exactly for hyperprior frames")

    @property
    def num_bytes(self) -> int:
        return len(self.y_string) + len(self.z_string or b"")


def serialize_frame(f: EncodedFrame) -> bytes:
    z = f.z_string or b""
    if len(f.y_string) > _U32_MAX or len(z) > _U32_MAX:
        raise FrameFormatError("string length overflows u32")
    if not (0 < f.height <= 0xFFFF and 0 < f.width <= 0xFFFF):
        raise FrameFormatError(f"geometry {f.height}x{f.width} does not fit u16")
    return b"".join((_HEADER.pack(MAGIC, VERSION, int(f.kind), f.height, f.width,
                                  len(f.y_string), len(z)), f.y_string, z))


def parse_frame(data: bytes, sequence: int = 0) -> EncodedFrame:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        if not MAGIC.startswith(data[:4]):
            raise FrameFormatError(f"bad magic {data[:4]!r}")
        raise FrameFormatError(f"truncated header: {len(data)} of {HEADER_SIZE} bytes")
    magic, version, kind, h, w, y_len, z_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FrameFormatError(f"unsupported frame version {version}")
    try:
        kind = CodecKind(kind)
    except ValueError:
        raise FrameFormatError(f"unknown codec kind {kind}") from None
    if kind is CodecKind.FACTORIZED and z_len:
        raise FrameFormatError("factorized frame declares a z string")
    total = HEADER_SIZE + y_len + z_len
    if total > len(data):
        raise FrameFormatError(
            f"truncated frame: header declares {total} bytes, got {len(data)}")
    if total < len(data):
        raise FrameFormatError(f"{len(data) - total} trailing bytes after frame")
    if h == 0 or w == 0:
        raise FrameFormatError("zero frame geometry")
    y = data[HEADER_SIZE:HEADER_SIZE + y_len]
    z = data[HEADER_SIZE + y_len:total] if kind is CodecKind.HYPERPRIOR else None
    return EncodedFrame(kind, h, w, y, z, sequence)


def frame_info(f: EncodedFrame) -> dict[str, Any]:
    return {"kind": f.kind.label, "height": f.height, "width": f.width,
            "y_bytes": len(f.y_string), "z_bytes": len(f.z_string or b"")}
