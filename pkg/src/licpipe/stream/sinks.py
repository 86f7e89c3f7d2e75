"""Frame consumers for the receiver: per-frame PPM, raw float, in-memory, discard."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from licpipe.imageio import write_ppm, write_raw


class PpmSink:
    """One 8-bit PPM per frame, ``frame_000000.ppm`` onward."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.count = 0

    def __call__(self, sequence: int, decoded) -> None:
        write_ppm(self.directory / f"frame_{sequence:06d}.ppm", decoded.image)
        self.count += 1


class RawSink:
    """Appends every frame's planar float32 samples to a single file."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        self.count = 0

    def __call__(self, sequence: int, decoded) -> None:
        self._fh.write(np.ascontiguousarray(decoded.image, dtype="<f4").tobytes())
        self.count += 1

    def close(self) -> None:
        self._fh.close()


class CollectSink:
    """Keeps (sequence, image copy, latent digest) in memory; for tests."""

    def __init__(self):
        self.frames = []

    def __call__(self, sequence: int, decoded) -> None:
        self.frames.append((sequence, np.array(decoded.image, copy=True),
                            decoded.latent_digest if decoded.latents else None))

    @property
    def sequences(self) -> list[int]:
        return [s for s, _, _ in self.frames]


class NullSink:
    def __init__(self):
        self.count = 0

    def __call__(self, sequence: int, decoded) -> None:
        self.count += 1
