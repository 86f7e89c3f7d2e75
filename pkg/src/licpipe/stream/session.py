"""Sender and receiver sessions connecting codec pipelines to a TCP stream.

Within a session the network loop and the pipeline run concurrently and
meet only through the pipeline's submit/collect contract: the sender paces
frames into its encoder pipeline while a writer thread drains it onto the
socket; the receiver reads messages into its decoder pipeline while a
collector thread hands decoded frames to the sink.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Union

import numpy as np

from licpipe.codec.frame import FrameFormatError, parse_frame, serialize_frame
from licpipe.codec.model import DigestMismatch, latent_digest
from licpipe.pipeline.core import Pipeline, PipelineClosed
from licpipe.stream.wire import (
    HandshakeRecord,
    MsgType,
    ProtocolError,
    WireMessage,
    read_message,
    write_message,
)

log = logging.getLogger(__name__)


class StreamError(RuntimeError):
    """Connection failure mid-stream; ``last_sequence`` is the last frame fully sent."""

    def __init__(self, message: str, last_sequence: int):
        super().__init__(message)
        self.last_sequence = last_sequence


@dataclass
class StreamStats:
    frames_sent: int = 0
    frames_received: int = 0
    frames_out_of_order: int = 0
    gaps: int = 0
    decode_failures: int = 0
    late_frames: int = 0
    dropped_frames: int = 0
    last_sequence: int = -1
    achieved_fps: float = 0.0
    latencies_ms: list = field(default_factory=list, repr=False)
    latent_digests: dict = field(default_factory=dict, repr=False)
    interrupted: bool = False
    disconnected: bool = False
    ended_cleanly: bool = False

    def summary(self) -> dict[str, Any]:
        lat = np.asarray(self.latencies_ms) if self.latencies_ms else np.zeros(1)
        return {
            "frames_sent": self.frames_sent,
            "frames_received": self.frames_received,
            "frames_out_of_order": self.frames_out_of_order,
            "gaps": self.gaps,
            "decode_failures": self.decode_failures,
            "late_frames": self.late_frames,
            "dropped_frames": self.dropped_frames,
            "last_sequence": self.last_sequence,
            "achieved_fps": round(self.achieved_fps, 3),
            "latency_p50_ms": round(float(np.percentile(lat, 50)), 3),
            "latency_max_ms": round(float(lat.max()), 3),
            "interrupted": self.interrupted,
            "ended_cleanly": self.ended_cleanly,
        }

    def to_record(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.summary().items())


def _fps(times: list[float]) -> float:
    if len(times) < 2 or times[-1] <= times[0]:
        return 0.0
    return (len(times) - 1) / (times[-1] - times[0])


def run_sender(source: Iterable[Any], encoder: Pipeline, conn, target_fps: float,
               handshake: HandshakeRecord, drop_late: bool = False) -> StreamStats:
    """Pace ``source`` frames into ``encoder`` and stream the encoded frames.

    A frame whose submission completes more than one frame period after its
    scheduled capture time is counted late.  With ``drop_late`` a frame that
    is already a full period overdue at capture time is skipped instead
    (counted in ``dropped_frames``); by default nothing is dropped.
    """
    stats = StreamStats()
    period = 1.0 / target_fps
    capture_us: dict[int, int] = {}
    lock = threading.Lock()
    failure: list[BaseException] = []
    send_times: list[float] = []

    write_message(conn, WireMessage(MsgType.HANDSHAKE, payload=handshake.pack()))

    def writer():
        try:
            for task in encoder.results():
                frame = task.result()
                seq = task.sequence
                with lock:
                    ts = capture_us.pop(seq)
                if frame.latents:
                    stats.latent_digests[seq] = latent_digest(frame.latents.get("y_hat"),
                                                              frame.latents.get("z_hat"))
                write_message(conn, WireMessage(MsgType.FRAME, seq, ts, serialize_frame(frame)))
                stats.frames_sent += 1
                stats.last_sequence = seq
                send_times.append(time.perf_counter())
        except BaseException as exc:
            failure.append(exc)
            encoder.shutdown(drain=False)

    wt = threading.Thread(target=writer, name="stream-writer", daemon=True)
    wt.start()

    t0 = time.perf_counter()
    n = 0
    try:
        for i, image in enumerate(source):
            scheduled = t0 + i * period
            delay = scheduled - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            elif drop_late and -delay > period:
                stats.dropped_frames += 1
                continue
            with lock:
                capture_us[n] = time.time_ns() // 1000
            encoder.submit(image)
            n += 1
            if time.perf_counter() - scheduled > period:
                stats.late_frames += 1
    except PipelineClosed:
        pass
    except KeyboardInterrupt:
        stats.interrupted = True
        encoder.shutdown(drain=False)
        wt.join()
        stats.achieved_fps = _fps(send_times)
        return stats
    encoder.shutdown(drain=True)
    wt.join()
    stats.achieved_fps = _fps(send_times)
    if failure:
        exc = failure[0]
        if isinstance(exc, OSError):
            raise StreamError(f"connection failed after frame {stats.last_sequence}: {exc}",
                              stats.last_sequence) from exc
        raise exc
    try:
        write_message(conn, WireMessage(MsgType.END, n))
    except OSError as exc:
        raise StreamError(f"connection failed after frame {stats.last_sequence}: {exc}",
                          stats.last_sequence) from exc
    stats.ended_cleanly = True
    return stats


DecoderArg = Union[Pipeline, Callable[[HandshakeRecord], Pipeline]]


def read_handshake(conn, weights_digest: bytes) -> HandshakeRecord:
    msg = read_message(conn)
    if msg is None:
        raise ProtocolError("connection closed before the handshake")
    if msg.msg_type is not MsgType.HANDSHAKE:
        raise ProtocolError(f"expected a handshake, got {msg.msg_type.name}")
    hs = HandshakeRecord.unpack(msg.payload)
    if hs.weights_digest != weights_digest:
        raise DigestMismatch(f"sender weights {hs.weights_digest.hex()[:16]}... do not match "
                             f"local weights {weights_digest.hex()[:16]}...")
    return hs


def run_receiver(conn, decoder: DecoderArg, sink: Callable[[int, Any], None],
                 weights_digest: bytes,
                 release: Optional[Callable[[Any], None]] = None) -> StreamStats:
    """Validate the handshake, decode incoming frames in order, feed ``sink``.

    ``decoder`` is a ready pipeline or a factory taking the handshake.  Its
    final stage must yield :class:`~licpipe.codec.model.Decoded` payloads;
    ``sink(sequence, decoded)`` receives them in sequence order, after which
    ``release(decoded.image)`` returns pooled buffers.  A frame that fails to
    parse or decode is counted and the stream continues.
    """
    hs = read_handshake(conn, weights_digest)
    pipeline = decoder if isinstance(decoder, Pipeline) else decoder(hs)
    stats = StreamStats()
    wire_seq: dict[int, tuple[int, int]] = {}
    lock = threading.Lock()
    sink_failure: list[BaseException] = []

    def collector():
        for task in pipeline.results():
            with lock:
                seq, ts = wire_seq.pop(task.sequence)
            if task.error is not None:
                log.warning("frame %d failed: %s", seq, task.error)
                stats.decode_failures += 1
                continue
            decoded = task.payload
            stats.latencies_ms.append((time.time_ns() // 1000 - ts) / 1000.0)
            if decoded.latents:
                stats.latent_digests[seq] = decoded.latent_digest
            try:
                sink(seq, decoded)
            except BaseException as exc:  # keep draining so the pipeline can stop
                if not sink_failure:
                    sink_failure.append(exc)
            finally:
                if release is not None:
                    release(decoded.image)

    ct = threading.Thread(target=collector, name="stream-collector", daemon=True)
    ct.start()

    expected = 0
    arrivals: list[float] = []
    try:
        while True:
            try:
                msg = read_message(conn)
            except (ProtocolError, OSError) as exc:
                log.warning("stream error after frame %d: %s", stats.last_sequence, exc)
                stats.disconnected = True
                break
            if msg is None:
                stats.disconnected = True
                break
            if msg.msg_type is MsgType.END:
                stats.ended_cleanly = True
                break
            if msg.msg_type is not MsgType.FRAME:
                raise ProtocolError(f"unexpected {msg.msg_type.name} mid-stream")
            arrivals.append(time.perf_counter())
            stats.frames_received += 1
            seq = msg.sequence
            if seq < expected:
                stats.frames_out_of_order += 1
            elif seq > expected:
                stats.gaps += seq - expected
                log.warning("gap: expected frame %d, got %d", expected, seq)
            expected = max(expected, seq + 1)
            stats.last_sequence = max(stats.last_sequence, seq)
            try:
                frame = parse_frame(msg.payload, sequence=seq)
            except FrameFormatError as exc:
                log.warning("frame %d unparseable: %s", seq, exc)
                stats.decode_failures += 1
                continue
            frame.weights_digest = hs.weights_digest
            with lock:
                wire_seq[pipeline.submitted] = (seq, msg.capture_timestamp_us)
            pipeline.submit(frame)
    except KeyboardInterrupt:
        stats.interrupted = True
        pipeline.shutdown(drain=False)
        ct.join()
        stats.achieved_fps = _fps(arrivals)
        return stats
    pipeline.shutdown(drain=True)
    ct.join()
    stats.achieved_fps = _fps(arrivals)
    if sink_failure:
        raise sink_failure[0]
    return stats
