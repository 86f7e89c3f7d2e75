"""Command-line entry point: ``licpipe <command> [flags]``.

Commands: genweights, encode, decode, bench, send, recv.

Exit codes:
    0   success
    2   usage error (bad flags or an invalid flag combination)
    3   I/O error (missing file, unreadable image, connection refused)
    4   protocol error (malformed frame or wire data, stream gaps)
    5   verification failure (weights digest mismatch, decode failures)
    130 interrupted (partial statistics are still printed)
"""

from __future__ import annotations

import argparse
import logging
import socket
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from licpipe import __version__
from licpipe.codec import (
    Activation,
    CodecConfig,
    CodecKind,
    DigestMismatch,
    FrameFormatError,
    ModelWeights,
    WeightFileError,
    generate_weights,
    load_weights,
    make_codec,
    parse_frame,
    save_weights,
    serialize_frame,
)
from licpipe.codec.config import DEFAULT_M, DEFAULT_N
from licpipe.codec.frame import frame_info
from licpipe.codec.model import GeometryError, latent_digest
from licpipe.entropy import CorruptStreamError
from licpipe.imageio import ImageFormatError, read_image, synthetic_frames, write_image
from licpipe.pipeline import (
    DEFAULT_QUEUE_CAPACITY,
    DEFAULT_WARMUP,
    BufferPool,
    Pipeline,
    run_benchmark,
    run_serial_reference,
)
from licpipe.stream import (
    HandshakeRecord,
    NullSink,
    PpmSink,
    ProtocolError,
    RawSink,
    StreamError,
    run_receiver,
    run_sender,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PROTOCOL = 4
EXIT_VERIFY = 5
EXIT_INTERRUPTED = 130

log = logging.getLogger("licpipe")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    codec: CodecKind
    activation: Activation
    N: int
    M: int
    L: int
    height: int
    width: int
    weights: Optional[Path]
    entropy_workers: int
    queue_capacity: int
    pool: bool
    warmup: int
    frames: Optional[int]
    seconds: Optional[float]
    listen: Optional[tuple[str, int]]
    connect: Optional[tuple[str, int]]
    fps: float
    seed: int
    input: Optional[Path]
    output: Optional[Path]
    metrics_out: Optional[Path]
    serial: bool
    compare: bool
    direction: str
    drop_late: bool

    def codec_config(self) -> CodecConfig:
        return CodecConfig(self.codec, self.activation, self.N, self.M, self.height,
                           self.width, self.L)


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("codec")
    g.add_argument("--codec", choices=["factorized", "hyper"], default="factorized")
    g.add_argument("--activation", choices=["gdn", "1dn"], default="gdn")
    g.add_argument("-N", type=int, default=DEFAULT_N, help="transform channels")
    g.add_argument("-M", type=int, default=DEFAULT_M, help="latent channels")
    g.add_argument("-L", type=int, default=32, help="symbol support bound")
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--weights", type=Path,
                   help="weight file (default: generate from the codec flags and --seed)")
    g.add_argument("--seed", type=int, default=42)
    p = common.add_argument_group("pipeline")
    p.add_argument("--entropy-workers", type=int, default=3)
    p.add_argument("--queue-capacity", type=int, default=DEFAULT_QUEUE_CAPACITY)
    p.add_argument("--pool", choices=["on", "off"], default="on")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    n = p.add_mutually_exclusive_group()
    n.add_argument("--frames", type=int)
    n.add_argument("--seconds", type=float)
    io = common.add_argument_group("files")
    io.add_argument("--input", type=Path)
    io.add_argument("--output", type=Path)
    io.add_argument("--metrics-out", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="licpipe", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("genweights", parents=[common], help="write a seeded weight file")
    sub.add_parser("encode", parents=[common], help="image -> frame file")
    sub.add_parser("decode", parents=[common], help="frame file -> image")
    b = sub.add_parser("bench", parents=[common], help="pipelined or serial benchmark")
    b.add_argument("--direction", choices=["encode", "decode"], default="encode")
    mode = b.add_mutually_exclusive_group()
    mode.add_argument("--serial", action="store_true", help="run the serial baseline")
    mode.add_argument("--compare", action="store_true", help="run serial and pipelined")
    s = sub.add_parser("send", parents=[common], help="stream encoded frames over TCP")
    s.add_argument("--connect", type=_address, required=True, metavar="HOST:PORT")
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--drop-late", action="store_true",
                   help="skip frames already a full period overdue (default: never drop)")
    r = sub.add_parser("recv", parents=[common], help="receive and decode a stream")
    r.add_argument("--listen", type=_address, required=True, metavar="HOST:PORT")
    return parser


def make_run_config(args: argparse.Namespace) -> RunConfig:
    """Validate flags as a whole; every problem becomes one UsageError."""
    cfg = RunConfig(
        command=args.command, codec=CodecKind.parse(args.codec),
        activation=Activation.parse(args.activation), N=args.N, M=args.M, L=args.L,
        height=args.height, width=args.width, weights=args.weights,
        entropy_workers=args.entropy_workers, queue_capacity=args.queue_capacity,
        pool=args.pool == "on", warmup=args.warmup, frames=args.frames, seconds=args.seconds,
        listen=getattr(args, "listen", None), connect=getattr(args, "connect", None),
        fps=getattr(args, "fps", 30.0), seed=args.seed, input=args.input, output=args.output,
        metrics_out=args.metrics_out, serial=getattr(args, "serial", False),
        compare=getattr(args, "compare", False), direction=getattr(args, "direction", "encode"),
        drop_late=getattr(args, "drop_late", False))
    if cfg.entropy_workers < 1:
        raise UsageError("--entropy-workers must be at least 1")
    if cfg.queue_capacity < 1:
        raise UsageError("--queue-capacity must be at least 1")
    if cfg.warmup < 0:
        raise UsageError("--warmup must be non-negative")
    if cfg.frames is not None and cfg.frames < 0:
        raise UsageError("--frames must be non-negative")
    if cfg.seconds is not None and cfg.seconds <= 0:
        raise UsageError("--seconds must be positive")
    if cfg.fps <= 0 or cfg.fps > 0xFFFF:
        raise UsageError("--fps must be in (0, 65535]")
    if cfg.command == "genweights" and cfg.output is None:
        raise UsageError("genweights needs --output")
    if cfg.command in ("encode", "decode") and (cfg.input is None or cfg.output is None):
        raise UsageError(f"{cfg.command} needs --input and --output")
    if cfg.command == "decode" and cfg.weights is None:
        raise UsageError("decode needs --weights (the frame is tied to one weight file)")
    if cfg.command == "send" and cfg.seconds is not None:
        raise UsageError("send takes --frames, not --seconds")
    if cfg.weights is None:
        try:
            cfg.codec_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return cfg


def _weights(cfg: RunConfig) -> ModelWeights:
    if cfg.weights is not None:
        return load_weights(cfg.weights)
    return generate_weights(cfg.codec_config(), seed=cfg.seed)


def _geometry_config(cfg: RunConfig, w: ModelWeights, height: int, width: int) -> CodecConfig:
    try:
        return w.config(height, width)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(cfg: RunConfig, lines: Sequence[str]) -> None:
    text = "\n".join(lines)
    print(text, flush=True)
    if cfg.metrics_out is not None:
        cfg.metrics_out.parent.mkdir(parents=True, exist_ok=True)
        cfg.metrics_out.write_text(text + "\n")


# -- commands ------------------------------------------------------------

def cmd_genweights(cfg: RunConfig) -> int:
    w = generate_weights(cfg.codec_config(), seed=cfg.seed)
    save_weights(w, cfg.output)
    print(f"digest={w.digest_hex} bytes={len(w.raw)} path={cfg.output}")
    return EXIT_OK


def cmd_encode(cfg: RunConfig) -> int:
    w = _weights(cfg)
    x = read_image(cfg.input, cfg.height, cfg.width)
    codec = make_codec(w, _geometry_config(cfg, w, x.shape[1], x.shape[2]), keep_latents=True)
    f = codec.encode(x)
    cfg.output.write_bytes(serialize_frame(f))
    info = frame_info(f)
    digest = latent_digest(f.latents.get("y_hat"), f.latents.get("z_hat"))
    print(" ".join(f"{k}={v}" for k, v in info.items())
          + f" latent_digest={digest} weights_digest={w.digest_hex}")
    return EXIT_OK


def cmd_decode(cfg: RunConfig) -> int:
    w = _weights(cfg)
    f = parse_frame(cfg.input.read_bytes())
    f.weights_digest = w.digest
    codec = make_codec(w, _geometry_config(cfg, w, f.height, f.width))
    d = codec.decode_with_latents(f)
    write_image(cfg.output, d.image)
    print(" ".join(f"{k}={v}" for k, v in frame_info(f).items())
          + f" latent_digest={d.latent_digest}")
    return EXIT_OK


def _bench_source(cfg: RunConfig, codec, direction: str):
    """Looping input: one sample (file or synthetic) repeated forever."""
    if cfg.input is not None:
        x = read_image(cfg.input, cfg.height, cfg.width)
    else:
        x = next(synthetic_frames(codec.cfg.height, codec.cfg.width, 1, seed=cfg.seed))
    sample = x if direction == "encode" else codec.encode(x)

    def forever():
        while True:
            yield sample
    return forever


def cmd_bench(cfg: RunConfig) -> int:
    from licpipe.report import write_report

    w = _weights(cfg)
    if cfg.input is not None:
        probe = read_image(cfg.input, cfg.height, cfg.width)
        h, wd = probe.shape[1:]
    else:
        h, wd = cfg.height, cfg.width
    ccfg = _geometry_config(cfg, w, h, wd)
    frames = cfg.frames
    if frames is None and cfg.seconds is None:
        frames = cfg.warmup + 100
    modes = ["serial", "pipelined"] if cfg.compare else (
        ["serial"] if cfg.serial else ["pipelined"])
    runs = []
    for mode in modes:
        pool = BufferPool(enabled=cfg.pool)
        codec = make_codec(w, ccfg, pool=pool)
        source = _bench_source(cfg, codec, cfg.direction)
        codec.decode(codec.encode(next(synthetic_frames(ccfg.height, ccfg.width, 1))))
        stages = (codec.encoder_stages if cfg.direction == "encode"
                  else codec.decoder_stages)(cfg.entropy_workers, cfg.queue_capacity)

        def release(payload, codec=codec):
            if cfg.direction == "decode":
                codec.release(payload.image)

        if mode == "serial":
            count = frames
            if count is None:
                # size the run to roughly fill the requested duration
                t = time.perf_counter()
                p = next(source())
                for st in stages:
                    p = st.work(p)
                release(p)
                count = max(cfg.warmup + 1, int(cfg.seconds / (time.perf_counter() - t)))
            m = run_serial_reference(stages, source(), count, cfg.warmup,
                                     lambda t: release(t.payload), pool)
        else:
            m = run_benchmark(Pipeline(stages, name=f"{ccfg.kind.label}-{cfg.direction}"),
                              source(), frames=frames, seconds=cfg.seconds,
                              warmup=cfg.warmup, sink=lambda t: release(t.payload),
                              pool=pool)
        runs.append(m)
    lines = [f"codec={ccfg.kind.label} activation={ccfg.activation.label} "
             f"direction={cfg.direction} pool={'on' if cfg.pool else 'off'} " + m.to_record()
             for m in runs]
    _emit(cfg, lines)
    if cfg.metrics_out is not None:
        for p in write_report(runs, cfg.metrics_out):
            log.info("wrote %s", p)
    else:
        for m in runs:
            print(m.table(), file=sys.stderr)
    return EXIT_OK


def _send_source(cfg: RunConfig, height: int, width: int, count: int):
    if cfg.input is not None:
        x = read_image(cfg.input, cfg.height, cfg.width)
        return (x for _ in range(count))
    # a short synthetic clip, looped
    clip = list(synthetic_frames(height, width, min(count, 30), seed=cfg.seed))
    return (clip[i % len(clip)] for i in range(count))


def cmd_send(cfg: RunConfig) -> int:
    w = _weights(cfg)
    if cfg.input is not None:
        h, wd = read_image(cfg.input, cfg.height, cfg.width).shape[1:]
    else:
        h, wd = cfg.height, cfg.width
    ccfg = _geometry_config(cfg, w, h, wd)
    count = cfg.frames if cfg.frames is not None else 300
    pool = BufferPool(enabled=cfg.pool)
    codec = make_codec(w, ccfg, pool=pool)
    _warm_up(w)
    encoder = Pipeline(codec.encoder_stages(cfg.entropy_workers, cfg.queue_capacity),
                       name="sender")
    handshake = HandshakeRecord.for_codec(w, h, wd, cfg.fps)
    with socket.create_connection(cfg.connect) as conn:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        stats = run_sender(_send_source(cfg, h, wd, count), encoder, conn, cfg.fps,
                           handshake, drop_late=cfg.drop_late)
    _emit(cfg, ["role=sender " + stats.to_record()])
    return EXIT_INTERRUPTED if stats.interrupted else EXIT_OK


def _warm_up(w: ModelWeights) -> None:
    """Pay one-time kernel loading costs on the smallest legal frame."""
    f = w.config(64, 64).downsampling
    codec = make_codec(w, w.config(f, f))
    codec.decode(codec.encode(next(synthetic_frames(f, f, 1))))


def cmd_recv(cfg: RunConfig) -> int:
    w = _weights(cfg)
    if cfg.output is None:
        sink = NullSink()
    elif cfg.output.suffix.lower() in (".raw", ".f32", ".bin"):
        sink = RawSink(cfg.output)
    else:
        sink = PpmSink(cfg.output)
    pool = BufferPool(enabled=cfg.pool)

    def decoder(hs: HandshakeRecord) -> Pipeline:
        ccfg = _geometry_config(cfg, w, hs.height, hs.width)
        codec = make_codec(w, ccfg, pool=pool)
        return Pipeline(codec.decoder_stages(cfg.entropy_workers, cfg.queue_capacity),
                        name="receiver")

    _warm_up(w)
    with socket.create_server(cfg.listen) as server:
        host, port = server.getsockname()[:2]
        print(f"listening={host}:{port}", flush=True)
        conn, peer = server.accept()
    with conn:
        log.info("connection from %s:%d", *peer[:2])
        try:
            stats = run_receiver(conn, decoder, sink, w.digest, release=pool.release)
        finally:
            if isinstance(sink, RawSink):
                sink.close()
    _emit(cfg, ["role=receiver " + stats.to_record()])
    if cfg.metrics_out is not None and stats.latencies_ms:
        from licpipe.pipeline import PipelineMetrics
        from licpipe.report import figure_paths, latency_histogram
        m = PipelineMetrics.from_samples("stream", np.asarray(stats.latencies_ms) / 1000.0,
                                         stats.frames_received, 1.0, stats.frames_received)
        latency_histogram([m], figure_paths(cfg.metrics_out)["latency"])
    if stats.interrupted:
        return EXIT_INTERRUPTED
    if stats.gaps or stats.frames_out_of_order or not stats.ended_cleanly:
        return EXIT_PROTOCOL
    if stats.decode_failures:
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {"genweights": cmd_genweights, "encode": cmd_encode, "decode": cmd_decode,
            "bench": cmd_bench, "send": cmd_send, "recv": cmd_recv}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_run_config(args)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"licpipe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DigestMismatch as exc:
        print(f"licpipe {args.command}: weights digest mismatch: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (WeightFileError, GeometryError) as exc:
        print(f"licpipe {args.command}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ProtocolError, FrameFormatError, CorruptStreamError, StreamError) as exc:
        print(f"licpipe {args.command}: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (OSError, ImageFormatError) as exc:
        print(f"licpipe {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print(f"licpipe {args.command}: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
