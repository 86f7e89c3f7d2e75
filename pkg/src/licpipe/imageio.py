"""Image files: binary 8-bit PPM (P6) and raw planar float32.

Images in memory are float32 arrays of shape (3, H, W) with values in
[0, 1].  PPM samples are scaled by 255, rounded half away from zero and
clamped on write, and divided by 255 on read.  Raw files are the planar
array in little-endian float32 with no header; the geometry comes from
the caller.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


class ImageFormatError(ValueError):
    pass


def to_bytes8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    v = np.asarray(image, dtype=np.float64) * 255.0
    v = np.floor(np.clip(v, 0.0, 255.0) + 0.5)
    return np.ascontiguousarray(v.astype(np.uint8).transpose(1, 2, 0))


def encode_ppm(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"expected a (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + to_bytes8(image).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    m = _PPM_HEADER.match(data)
    if m is None:
        raise ImageFormatError("not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM is supported, maxval is {maxval}")
    if w == 0 or h == 0:
        raise ImageFormatError("zero image geometry")
    body = data[m.end():]
    need = w * h * 3
    if len(body) < need:
        raise ImageFormatError(f"truncated PPM: {len(body)} of {need} sample bytes")
    pix = np.frombuffer(body, dtype=np.uint8, count=need).reshape(h, w, 3)
    return (pix.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def write_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_raw(path, image: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_raw(path, height: int, width: int) -> np.ndarray:
    data = Path(path).read_bytes()
    need = 3 * height * width * 4
    if len(data) != need:
        raise ImageFormatError(f"raw image is {len(data)} bytes, {height}x{width} needs {need}")
    return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(3, height, width)


def read_image(path, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Load PPM by content, anything else as raw planar float (needs geometry)."""
    data = Path(path).read_bytes()
    if data[:2] == b"P6":
        return decode_ppm(data)
    if height is None or width is None:
        raise ImageFormatError(f"{path}: not a PPM and no geometry given for raw input")
    return read_raw(path, height, width)


def write_image(path, image: np.ndarray) -> None:
    """PPM for ``.ppm`` paths, raw planar float otherwise."""
    if str(path).lower().endswith(".ppm"):
        write_ppm(path, image)
    else:
        write_raw(path, image)


def synthetic_frames(height: int, width: int, count: int, seed: int = 0):
    """Deterministic smooth test frames with a moving gradient and noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    for i in range(count):
        base = np.stack([
            0.5 + 0.4 * np.sin((xx + 3 * i) / 17.0),
            0.5 + 0.4 * np.cos((yy - 2 * i) / 23.0),
            0.5 + 0.4 * np.sin((xx + yy + i) / 31.0),
        ])
        noise = rng.normal(0.0, 0.05, size=base.shape).astype(np.float32)
        yield np.clip(base + noise, 0.0, 1.0).astype(np.float32)
