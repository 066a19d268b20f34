"""Content-addressed observation store.

Consecutive transitions share most of their stacked frames, so observations
are kept once under a hash of their bytes and referenced by key.
"""

from __future__ import annotations

import hashlib

import numpy as np

KEY_BYTES = 16


def content_key(array: np.ndarray) -> bytes:
    a = np.ascontiguousarray(array)
    h = hashlib.blake2b(digest_size=KEY_BYTES)
    h.update(a.dtype.str.encode())
    h.update(np.asarray(a.shape, dtype="<u4").tobytes())
    h.update(a.tobytes())
    return h.digest()


class ObservationStore:
    """Reference-counted key -> array map.

    ``put`` registers a blob without a reference; ``incref``/``decref`` are
    driven by transitions entering and leaving the ring. Unreferenced blobs are
    dropped by ``collect``.
    """

    def __init__(self):
        self._blobs: dict[bytes, np.ndarray] = {}
        self._refs: dict[bytes, int] = {}

    def put(self, key: bytes, array: np.ndarray) -> None:
        if key not in self._blobs:
            arr = np.array(array, copy=True)
            arr.setflags(write=False)
            self._blobs[key] = arr
            self._refs[key] = 0

    def add(self, array: np.ndarray) -> bytes:
        key = content_key(array)
        self.put(key, array)
        return key

    def __contains__(self, key) -> bool:
        return key in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def get(self, key: bytes) -> np.ndarray:
        return self._blobs[key]

    def incref(self, key: bytes) -> None:
        if key not in self._blobs:
            raise KeyError(f"unknown observation key {key.hex()}")
        self._refs[key] += 1

    def decref(self, key: bytes) -> None:
        n = self._refs[key] - 1
        if n <= 0:
            del self._refs[key]
            del self._blobs[key]
        else:
            self._refs[key] = n

    def collect(self) -> int:
        dead = [k for k, n in self._refs.items() if n == 0]
        for k in dead:
            del self._refs[k]
            del self._blobs[k]
        return len(dead)

    def refcount(self, key: bytes) -> int:
        return self._refs.get(key, 0)
