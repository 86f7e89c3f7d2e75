"""Golden-artifact verification under a chosen host byte order.

The readers here share no parsing code with the package: headers are
decoded with ``int.from_bytes`` and float payloads are materialized the way
a host of the requested byte order holds them in memory (``>f4`` arrays for
``"big"``).  Those arrays are fed back through the package writer and codec,
so a byte-order assumption anywhere on that path breaks a check.

Run as ``python3 tests/portable.py big`` to print the check results as JSON;
combine with ``NUMBA_DISABLE_JIT=1`` for an interpreted-kernel configuration.
"""

from __future__ import annotations

import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

GOLDEN = Path(__file__).resolve().parent / "golden"


def _u(data: bytes, off: int, n: int) -> int:
    return int.from_bytes(data[off:off + n], "little")


def host_floats(raw: bytes, order: str) -> np.ndarray:
    """Little-endian float32 payload as stored by a host of byte order ``order``."""
    groups = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 4)
    if order == "big":
        return groups[:, ::-1].copy().view(">f4").ravel()
    return groups.copy().view("<f4").ravel()


def read_weight_file(raw: bytes, order: str) -> tuple[dict, list]:
    assert raw[:4] == b"LICW"
    head = {"version": raw[4], "kind": raw[5], "activation": raw[6],
            "N": _u(raw, 7, 2), "M": _u(raw, 9, 2), "L": _u(raw, 11, 2)}
    blocks, pos = [], 13
    while pos < len(raw):
        tag, count = raw[pos], _u(raw, pos + 1, 4)
        pos += 5
        blocks.append((tag, host_floats(raw[pos:pos + 4 * count], order)))
        pos += 4 * count
    assert pos == len(raw)
    return head, blocks


def read_frame(raw: bytes) -> dict:
    assert raw[:4] == b"LICF"
    y_len, z_len = _u(raw, 10, 4), _u(raw, 14, 4)
    return {"version": raw[4], "kind": raw[5], "height": _u(raw, 6, 2),
            "width": _u(raw, 8, 2), "y": raw[18:18 + y_len],
            "z": raw[18 + y_len:18 + y_len + z_len], "size": 18 + y_len + z_len}


def read_capture(raw: bytes) -> list[dict]:
    out, pos = [], 0
    while pos < len(raw):
        assert raw[pos:pos + 4] == b"LICS"
        length = _u(raw, pos + 22, 4)
        out.append({"version": raw[pos + 4], "type": raw[pos + 5], "seq": _u(raw, pos + 6, 8),
                    "ts": _u(raw, pos + 14, 8), "payload": raw[pos + 26:pos + 26 + length]})
        pos += 26 + length
    return out


def verify(order: str, golden: Path = GOLDEN) -> dict[str, bool]:
    """Every golden check under the byte order ``order``; check name -> passed."""
    from licpipe.codec import CodecKind, make_codec, parse_frame, weights_from_bytes
    from licpipe.codec.weights import _blocks_for, _encode
    from licpipe.imageio import to_bytes8
    from licpipe.stream import HandshakeRecord, MsgType, read_message

    manifest = json.loads((golden / "manifest.json").read_text())
    checks: dict[str, bool] = {}
    for name, digest in manifest["files"].items():
        checks[f"sha256 {name}"] = hashlib.sha256((golden / name).read_bytes()).hexdigest() == digest

    weights = {}
    for name, expect in manifest["codecs"].items():
        raw = (golden / f"weights_{name}.bin").read_bytes()
        head, blocks = read_weight_file(raw, order)
        kind = CodecKind(head["kind"])
        layout = list(_blocks_for(kind, head["N"], head["M"]))
        checks[f"{name} weight block tags"] = [t for t, _ in blocks] == [t for t, _, _ in layout]
        arrays = {key: vals.reshape(shape) if shape else vals
                  for (_, shape, key), (_, vals) in zip(layout, blocks)}
        rebuilt = _encode(kind, head["activation"], head["N"], head["M"], head["L"], arrays)
        checks[f"{name} weights rewrite bit-exact"] = rebuilt == raw
        w = weights_from_bytes(rebuilt)
        checks[f"{name} weights digest"] = w.digest_hex == expect["weights_digest"]
        weights[name] = w

        fraw = (golden / f"frame_{name}.lic").read_bytes()
        mine, theirs = read_frame(fraw), parse_frame(fraw)
        checks[f"{name} frame header"] = (
            mine["size"] == len(fraw) and mine["kind"] == int(theirs.kind)
            and (mine["height"], mine["width"]) == (theirs.height, theirs.width)
            and mine["y"] == theirs.y_string and mine["z"] == (theirs.z_string or b""))
        theirs.weights_digest = w.digest
        codec = make_codec(w, w.config(theirs.height, theirs.width))
        d = codec.decode_with_latents(theirs)
        checks[f"{name} frame latent digest"] = d.latent_digest == expect["latent_digest"]
        checks[f"{name} decoded image"] = (
            hashlib.sha256(to_bytes8(d.image).tobytes()).hexdigest() == expect["decoded_ppm_sha256"])

    craw = (golden / "stream.cap").read_bytes()
    mine = read_capture(craw)
    buf, theirs = io.BytesIO(craw), []
    while (m := read_message(buf)) is not None:
        theirs.append(m)
    checks["capture message walk"] = (
        len(mine) == len(theirs)
        and all(a["type"] == int(b.msg_type) and a["seq"] == b.sequence
                and a["ts"] == b.capture_timestamp_us and a["payload"] == b.payload
                for a, b in zip(mine, theirs)))
    hs = HandshakeRecord.unpack(mine[0]["payload"])
    w = weights["factorized"]
    checks["capture handshake"] = (mine[0]["type"] == int(MsgType.HANDSHAKE)
                                   and hs.weights_digest == w.digest
                                   and (hs.height, hs.width) == (manifest["height"],
                                                                 manifest["width"]))
    frames = [m for m in mine if m["type"] == int(MsgType.FRAME)]
    codec = make_codec(w, w.config(hs.height, hs.width))
    digests = []
    for m in frames:
        f = parse_frame(m["payload"], sequence=m["seq"])
        f.weights_digest = w.digest
        digests.append(codec.decode_with_latents(f).latent_digest)
    checks["capture frame latents"] = digests == manifest["capture"]["latent_digests"]
    checks["capture end marker"] = (mine[-1]["type"] == int(MsgType.END)
                                    and mine[-1]["seq"] == manifest["capture"]["frames"])
    return checks


if __name__ == "__main__":
    print(json.dumps(verify(sys.argv[1] if len(sys.argv) > 1 else sys.byteorder)))
