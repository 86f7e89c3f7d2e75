"""Wire protocol and sender/receiver sessions over local socket pairs."""

import io
import socket
import struct
import threading
import time

import numpy as np
import pytest

from licpipe.codec import (
    Activation,
    CodecConfig,
    CodecKind,
    DigestMismatch,
    generate_weights,
    make_codec,
    serialize_frame,
)
from licpipe.imageio import synthetic_frames
from licpipe.pipeline import Pipeline, StageSpec, serialized
from licpipe.stream import (
    MAX_PAYLOAD,
    CollectSink,
    HandshakeRecord,
    MsgType,
    ProtocolError,
    StreamError,
    TruncatedMessage,
    WireMessage,
    read_message,
    run_receiver,
    run_sender,
    write_message,
)

CFG = CodecConfig(CodecKind.FACTORIZED, Activation.ONEDN, 8, 12, 64, 64)


@pytest.fixture(scope="module")
def weights():
    return generate_weights(CFG, seed=42)


def clip(n, seed=0):
    frames = list(synthetic_frames(64, 64, min(n, 10), seed=seed))
    return [frames[i % len(frames)] for i in range(n)]


def start_receiver(conn, weights, sink, **kw):
    out = {}

    def run():
        try:
            dec = make_codec(weights, CFG, keep_latents=True)
            out["stats"] = run_receiver(conn, lambda hs: Pipeline(dec.decoder_stages()),
                                        sink, weights.digest, **kw)
        except BaseException as exc:
            out["error"] = exc
        finally:
            conn.close()
    t = threading.Thread(target=run)
    t.start()
    return t, out


def send(frames, weights, conn, fps=200.0, **kw):
    enc = make_codec(weights, CFG, keep_latents=True)
    hs = HandshakeRecord.for_codec(weights, 64, 64, fps)
    return run_sender(iter(frames), Pipeline(enc.encoder_stages()), conn, fps, hs, **kw)


class TestWire:
    def test_round_trip_random_messages(self):
        r = np.random.default_rng(0)
        a, b = socket.socketpair()
        msgs = [WireMessage(MsgType(int(r.integers(0, 3))), int(r.integers(0, 2**63)),
                            int(r.integers(0, 2**63)), r.bytes(int(r.integers(0, 5000))))
                for _ in range(50)]
        t = threading.Thread(target=lambda: [write_message(a, m) for m in msgs])
        t.start()
        got = [read_message(b) for _ in msgs]
        t.join()
        assert got == msgs
        a.close()
        assert read_message(b) is None

    def test_layout(self):
        data = WireMessage(MsgType.FRAME, 7, 9, b"abc").pack()
        assert data[:4] == bytes([0x4C, 0x49, 0x43, 0x53])
        assert struct.unpack("<BBQQI", data[4:26]) == (1, 1, 7, 9, 3)
        assert data[26:] == b"abc"

    def test_truncated_payload(self):
        data = WireMessage(MsgType.FRAME, 1, 0, b"x" * 100).pack()
        with pytest.raises(TruncatedMessage) as info:
            read_message(io.BytesIO(data[:-40]))
        assert (info.value.expected, info.value.got) == (100, 60)

    def test_truncated_header(self):
        with pytest.raises(TruncatedMessage):
            read_message(io.BytesIO(WireMessage(MsgType.END).pack()[:10]))

    def test_bad_magic_and_version(self):
        data = bytearray(WireMessage(MsgType.END).pack())
        with pytest.raises(ProtocolError, match="magic"):
            read_message(io.BytesIO(b"LICF" + bytes(data[4:])))
        data[4] = 9
        with pytest.raises(ProtocolError, match="version"):
            read_message(io.BytesIO(bytes(data)))

    def test_length_guard_before_payload(self):
        head = struct.pack("<4sBBQQI", b"LICS", 1, 1, 0, 0, MAX_PAYLOAD + 1)
        with pytest.raises(ProtocolError, match="64 MiB"):
            read_message(io.BytesIO(head))

    def test_unknown_type(self):
        head = struct.pack("<4sBBQQI", b"LICS", 1, 7, 0, 0, 0)
        with pytest.raises(ProtocolError, match="unknown message type"):
            read_message(io.BytesIO(head))

    def test_handshake_round_trip(self, weights):
        hs = HandshakeRecord.for_codec(weights, 64, 64, 30)
        assert HandshakeRecord.unpack(hs.pack()) == hs
        assert len(hs.pack()) == 1 + 1 + 2 * 5 + 32
        with pytest.raises(ProtocolError):
            HandshakeRecord.unpack(hs.pack()[:-1])


class TestSessions:
    def test_loopback_latents_and_order(self, weights):
        a, b = socket.socketpair()
        sink = CollectSink()
        t, out = start_receiver(b, weights, sink)
        s = send(clip(40), weights, a)
        a.close()
        t.join()
        r = out["stats"]
        assert sink.sequences == list(range(40))
        assert r.frames_received == 40 and r.frames_out_of_order == 0 and r.gaps == 0
        assert r.ended_cleanly and s.ended_cleanly and s.dropped_frames == 0
        assert s.latent_digests == r.latent_digests
        assert len(r.latent_digests) == 40

    def test_empty_source(self, weights):
        a, b = socket.socketpair()
        s = send([], weights, a)
        a.close()
        types = []
        while (m := read_message(b)) is not None:
            types.append(m.msg_type)
        assert types == [MsgType.HANDSHAKE, MsgType.END]
        assert s.frames_sent == 0 and s.ended_cleanly

    def test_overload_counts_late_never_drops(self, weights):
        a, b = socket.socketpair()
        sink = CollectSink()
        t, out = start_receiver(b, weights, sink)
        enc = make_codec(weights, CFG)
        stages = [StageSpec("slow", lambda x: (time.sleep(0.03), x)[1], queue_capacity=1),
                  *enc.encoder_stages(2, 1)]
        hs = HandshakeRecord.for_codec(weights, 64, 64, 100)
        s = run_sender(iter(clip(20)), Pipeline(stages), a, 100.0, hs)
        a.close()
        t.join()
        assert s.late_frames > 0
        assert s.dropped_frames == 0 and s.frames_sent == 20
        assert out["stats"].frames_received == 20

    def test_drop_late_policy_is_opt_in(self, weights):
        a, b = socket.socketpair()
        t, out = start_receiver(b, weights, CollectSink())

        def slow_source():
            for x in clip(12):
                time.sleep(0.03)
                yield x
        enc = make_codec(weights, CFG)
        hs = HandshakeRecord.for_codec(weights, 64, 64, 200)
        s = run_sender(slow_source(), Pipeline(enc.encoder_stages()), a, 200.0, hs,
                       drop_late=True)
        a.close()
        t.join()
        assert s.dropped_frames > 0
        assert s.frames_sent + s.dropped_frames == 12
        # the stream itself stays gap-free: sequences number sent frames
        assert out["stats"].gaps == 0

    def test_digest_mismatch_aborts_before_decode(self, weights):
        other = generate_weights(CFG, seed=1)
        a, b = socket.socketpair()
        built = []

        def factory(hs):
            built.append(hs)
            return Pipeline([serialized("never", lambda f: f)])
        write_message(a, WireMessage(MsgType.HANDSHAKE,
                                     payload=HandshakeRecord.for_codec(other, 64, 64, 30).pack()))
        with pytest.raises(DigestMismatch):
            run_receiver(b, factory, CollectSink(), weights.digest)
        assert built == []

    def test_corrupt_frame_counted_and_stream_continues(self, weights):
        a, b = socket.socketpair()
        sink = CollectSink()
        t, out = start_receiver(b, weights, sink)
        enc = make_codec(weights, CFG)
        write_message(a, WireMessage(MsgType.HANDSHAKE,
                                     payload=HandshakeRecord.for_codec(weights, 64, 64, 30).pack()))
        for i, x in enumerate(clip(6)):
            payload = serialize_frame(enc.encode(x))
            if i == 2:
                payload = payload[:-5] + bytes(5)  # damage the entropy-coded tail
            write_message(a, WireMessage(MsgType.FRAME, i, time.time_ns() // 1000, payload))
        write_message(a, WireMessage(MsgType.END, 6))
        a.close()
        t.join()
        r = out["stats"]
        assert r.decode_failures == 1
        assert sink.sequences == [0, 1, 3, 4, 5]
        assert r.frames_received == 6

    def test_unparseable_frame_counted(self, weights):
        a, b = socket.socketpair()
        sink = CollectSink()
        t, out = start_receiver(b, weights, sink)
        enc = make_codec(weights, CFG)
        write_message(a, WireMessage(MsgType.HANDSHAKE,
                                     payload=HandshakeRecord.for_codec(weights, 64, 64, 30).pack()))
        write_message(a, WireMessage(MsgType.FRAME, 0, 0, b"garbage"))
        write_message(a, WireMessage(MsgType.FRAME, 1, 0, serialize_frame(enc.encode(clip(1)[0]))))
        write_message(a, WireMessage(MsgType.END, 2))
        a.close()
        t.join()
        assert out["stats"].decode_failures == 1
        assert sink.sequences == [1]

    def test_gap_and_disorder_reported(self, weights):
        a, b = socket.socketpair()
        t, out = start_receiver(b, weights, CollectSink())
        enc = make_codec(weights, CFG)
        frame = serialize_frame(enc.encode(clip(1)[0]))
        write_message(a, WireMessage(MsgType.HANDSHAKE,
                                     payload=HandshakeRecord.for_codec(weights, 64, 64, 30).pack()))
        for seq in (0, 1, 3, 2):
            write_message(a, WireMessage(MsgType.FRAME, seq, 0, frame))
        a.close()  # no end-of-stream: a disconnect
        t.join()
        r = out["stats"]
        assert r.gaps == 1 and r.frames_out_of_order == 1
        assert r.disconnected and not r.ended_cleanly
        assert r.frames_received <= r.last_sequence + 1

    def test_disconnect_mid_message_finalizes(self, weights):
        a, b = socket.socketpair()
        t, out = start_receiver(b, weights, CollectSink())
        enc = make_codec(weights, CFG)
        write_message(a, WireMessage(MsgType.HANDSHAKE,
                                     payload=HandshakeRecord.for_codec(weights, 64, 64, 30).pack()))
        data = WireMessage(MsgType.FRAME, 0, 0, serialize_frame(enc.encode(clip(1)[0]))).pack()
        a.sendall(data[:len(data) // 2])
        a.close()
        t.join()
        assert out["stats"].disconnected and out["stats"].frames_received == 0

    def test_sender_connection_failure_reports_last_sequence(self, weights):
        a, b = socket.socketpair()
        received = []

        def reader():
            read_message(b)
            for _ in range(3):
                received.append(read_message(b).sequence)
            b.close()
        t = threading.Thread(target=reader)
        t.start()
        with pytest.raises(StreamError) as info:
            send(clip(200), weights, a, fps=100.0)
        t.join()
        assert received == [0, 1, 2]
        assert info.value.last_sequence >= 2

    def test_interrupt_gives_partial_stats(self, weights):
        a, b = socket.socketpair()
        t, out = start_receiver(b, weights, CollectSink())

        def source():
            yield from clip(5)
            raise KeyboardInterrupt
        s = send(source(), weights, a)
        a.close()
        t.join()
        assert s.interrupted and not s.ended_cleanly
        assert s.frames_sent <= 5
        assert out["stats"].disconnected

    def test_pooled_receiver_releases_frames(self, weights):
        from licpipe.pipeline import BufferPool
        pool = BufferPool()
        dec = make_codec(weights, CFG, pool=pool)
        a, b = socket.socketpair()
        res = {}
        t = threading.Thread(target=lambda: res.setdefault("s", run_receiver(
            b, Pipeline(dec.decoder_stages()), CollectSink(), weights.digest,
            release=pool.release)))
        t.start()
        send(clip(15), weights, a)
        a.close()
        t.join()
        assert res["s"].frames_received == 15
        assert pool.outstanding() == 0

    def test_stats_record(self, weights):
        from licpipe.stream import StreamStats
        rec = StreamStats(frames_received=3, latencies_ms=[1.0, 2.0, 3.0]).to_record()
        assert "frames_received=3" in rec and "latency_p50_ms=2.0" in rec
