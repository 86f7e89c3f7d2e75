"""Frame streaming over TCP: wire protocol, sender and receiver sessions, sinks."""

from licpipe.stream.session import (
    StreamError,
    StreamStats,
    read_handshake,
    run_receiver,
    run_sender,
)
from licpipe.stream.sinks import CollectSink, NullSink, PpmSink, RawSink
from licpipe.stream.wire import (
    MAGIC,
    MAX_PAYLOAD,
    HandshakeRecord,
    MsgType,
    ProtocolError,
    TruncatedMessage,
    WireMessage,
    read_message,
    write_message,
)

__all__ = [
    "MAGIC",
    "MAX_PAYLOAD",
    "CollectSink",
    "HandshakeRecord",
    "MsgType",
    "NullSink",
    "PpmSink",
    "ProtocolError",
    "RawSink",
    "StreamError",
    "StreamStats",
    "TruncatedMessage",
    "WireMessage",
    "read_handshake",
    "read_message",
    "run_receiver",
    "run_sender",
    "write_message",
]
