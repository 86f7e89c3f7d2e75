"""Length-prefixed wire messages for frame streaming over TCP.

Message layout (little-endian)::

    "LICS" | version u8 = 1 | msg_type u8 | sequence u64
           | capture_timestamp_us u64 | payload_len u32 | payload

``msg_type`` 0 carries a :class:`HandshakeRecord`, 1 a serialized
:class:`~licpipe.codec.frame.EncodedFrame`, 2 marks end-of-stream.
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass
from typing import Optional

MAGIC = b"LICS"
VERSION = 1
MAX_PAYLOAD = 64 * 1024 * 1024
_HEADER = struct.Struct("<4sBBQQI")
HEADER_SIZE = _HEADER.size
_HANDSHAKE = struct.Struct("<BBHHHHH32s")


class MsgType(enum.IntEnum):
    HANDSHAKE = 0
    FRAME = 1
    END = 2


class ProtocolError(Exception):
    """Malformed or unexpected data on the wire."""


class TruncatedMessage(ProtocolError):
    def __init__(self, what: str, expected: int, got: int):
        super().__init__(f"stream cut inside {what}: expected {expected} bytes, got {got}")
        self.expected = expected
        self.got = got


@dataclass
class WireMessage:
    msg_type: MsgType
    sequence: int = 0
    capture_timestamp_us: int = 0
    payload: bytes = b""

    def __post_init__(self):
        self.msg_type = MsgType(self.msg_type)

    def pack(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise ProtocolError(f"payload of {len(self.payload)} bytes exceeds the 64 MiB limit")
        return _HEADER.pack(MAGIC, VERSION, int(self.msg_type), self.sequence,
                            self.capture_timestamp_us, len(self.payload)) + self.payload


@dataclass(frozen=True)
class HandshakeRecord:
    codec_kind: int
    activation: int
    N: int
    M: int
    height: int
    width: int
    target_fps: int
    weights_digest: bytes

    def pack(self) -> bytes:
        return _HANDSHAKE.pack(self.codec_kind, self.activation, self.N, self.M,
                               self.height, self.width, self.target_fps, self.weights_digest)

    @classmethod
    def unpack(cls, data: bytes) -> "HandshakeRecord":
        if len(data) != _HANDSHAKE.size:
            raise ProtocolError(f"handshake record is {len(data)} bytes, "
                                f"expected {_HANDSHAKE.size}")
        return cls(*_HANDSHAKE.unpack(data))

    @classmethod
    def for_codec(cls, weights, height: int, width: int, target_fps: int) -> "HandshakeRecord":
        return cls(int(weights.kind), int(weights.activation), weights.N, weights.M,
                   height, width, int(round(target_fps)), weights.digest)


def _send(conn, data: bytes) -> None:
    if isinstance(conn, socket.socket):
        conn.sendall(data)
    else:
        conn.write(data)
        flush = getattr(conn, "flush", None)
        if flush is not None:
            flush()


def _recv_exact(conn, n: int, what: str, allow_eof: bool = False) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        if isinstance(conn, socket.socket):
            chunk = conn.recv(n - got)
        else:
            chunk = conn.read(n - got)
        if not chunk:
            if got == 0 and allow_eof:
                return None
            raise TruncatedMessage(what, n, got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def write_message(conn, m: WireMessage) -> None:
    _send(conn, m.pack())


def read_message(conn) -> Optional[WireMessage]:
    """Read one message; returns None on a clean end of connection between messages."""
    head = _recv_exact(conn, HEADER_SIZE, "message header", allow_eof=True)
    if head is None:
        return None
    magic, version, msg_type, seq, ts, length = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds the 64 MiB limit")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    payload = _recv_exact(conn, length, f"payload of message {seq}") if length else b""
    return WireMessage(msg_type, seq, ts, payload)
