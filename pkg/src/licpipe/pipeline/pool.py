"""Exact-size free-list buffer pool.

Buffers are 1-D ``uint8`` numpy arrays keyed by byte length.  ``array``
hands out typed views; releasing a view returns its root buffer.  When the
pool is disabled every acquire allocates and every release drops the buffer,
which makes the allocation counter a direct measure of per-frame churn.
"""

from __future__ import annotations

import threading
from collections import defaultdict

import numpy as np


class ForeignBufferError(ValueError):
    """Released a buffer that this pool did not hand out (or released it twice)."""


class BufferPool:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._lock = threading.Lock()
        self._free: dict[int, list[np.ndarray]] = defaultdict(list)
        self._outstanding: dict[int, np.ndarray] = {}
        self._live_by_class: dict[int, int] = defaultdict(int)
        self.high_water: dict[int, int] = defaultdict(int)
        self.allocations = 0
        self.reuses = 0
        self.releases = 0

    @property
    def acquires(self) -> int:
        return self.allocations + self.reuses

    def acquire(self, nbytes: int) -> np.ndarray:
        """Return a buffer of exactly ``nbytes``; never blocks on other holders."""
        with self._lock:
            free = self._free.get(nbytes)
            if free:
                buf = free.pop()
                self.reuses += 1
            else:
                buf = None
                self.allocations += 1
        if buf is None:
            buf = np.empty(nbytes, dtype=np.uint8)
        with self._lock:
            self._outstanding[id(buf)] = buf
            live = self._live_by_class[nbytes] + 1
            self._live_by_class[nbytes] = live
            if live > self.high_water[nbytes]:
                self.high_water[nbytes] = live
        return buf

    def reserve(self, nbytes: int, count: int) -> int:
        """Make sure ``count`` buffers of ``nbytes`` exist (free or held); returns how
        many were allocated now.  A no-op for a disabled pool."""
        if not self.enabled:
            return 0
        with self._lock:
            missing = count - len(self._free[nbytes]) - self._live_by_class[nbytes]
            if missing <= 0:
                return 0
            self.allocations += missing
            self._free[nbytes].extend(np.empty(nbytes, dtype=np.uint8) for _ in range(missing))
            return missing

    def array(self, shape, dtype=np.float32) -> np.ndarray:
        dtype = np.dtype(dtype)
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        nbytes = int(np.prod(shape)) * dtype.itemsize
        return self.acquire(nbytes).view(dtype).reshape(shape)

    def _root(self, arr: np.ndarray) -> np.ndarray:
        node = arr
        while node is not None:
            if id(node) in self._outstanding and self._outstanding[id(node)] is node:
                return node
            node = node.base if isinstance(node, np.ndarray) else None
        raise ForeignBufferError("buffer was not acquired from this pool or was already released")

    def release(self, arr: np.ndarray) -> None:
        with self._lock:
            root = self._root(arr)
            del self._outstanding[id(root)]
            self._live_by_class[root.nbytes] -= 1
            self.releases += 1
            if self.enabled:
                self._free[root.nbytes].append(root)

    def outstanding(self) -> int:
        with self._lock:
            return len(self._outstanding)

    def counters(self) -> dict:
        with self._lock:
            return {
                "pool_allocations": self.allocations,
                "pool_reuses": self.reuses,
                "pool_outstanding": len(self._outstanding),
                "pool_size_classes": len(self.high_water),
            }
