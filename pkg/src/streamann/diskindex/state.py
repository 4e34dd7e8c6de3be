"""Mutable index state visible to searchers: id->slot map, tombstones, header.

The arrays normally live in private memory and grow on demand. ``share``
moves them into a named shared-memory block so a searcher in another
process can attach; a shared block has fixed capacity.
"""

from __future__ import annotations

from multiprocessing import shared_memory

import numpy as np

from ..errors import StorageError

# header slots
ENTRY, TAIL, LIVE, GENERATION, CAPACITY = range(5)
_HEADER_WORDS = 8


class IndexState:
    def __init__(self, capacity: int) -> None:
        capacity = max(int(capacity), 1)
        self.shm: shared_memory.SharedMemory | None = None
        self._owner = True
        self.header = np.zeros(_HEADER_WORDS, np.int64)
        self.loc = np.full(capacity, -1, np.int64)
        self.tomb = np.zeros(capacity, np.uint8)
        self.header[CAPACITY] = capacity

    # -- shared memory -------------------------------------------------------

    @staticmethod
    def _carve(buf, capacity: int):
        header = np.ndarray(_HEADER_WORDS, np.int64, buffer=buf)
        loc = np.ndarray(capacity, np.int64, buffer=buf, offset=8 * _HEADER_WORDS)
        tomb = np.ndarray(capacity, np.uint8, buffer=buf, offset=8 * (_HEADER_WORDS + capacity))
        return header, loc, tomb

    def share(self, capacity: int | None = None) -> str:
        """Move the state into shared memory; returns the block name."""
        if self.shm is not None:
            return self.shm.name
        capacity = max(int(capacity or 0), self.capacity)
        size = 8 * (_HEADER_WORDS + capacity) + capacity
        shm = shared_memory.SharedMemory(create=True, size=size)
        header, loc, tomb = self._carve(shm.buf, capacity)
        header[:] = self.header
        header[CAPACITY] = capacity
        loc[:] = -1
        loc[: self.loc.size] = self.loc
        tomb[:] = 0
        tomb[: self.tomb.size] = self.tomb
        self.shm, self.header, self.loc, self.tomb = shm, header, loc, tomb
        return shm.name

    @classmethod
    def attach(cls, name: str) -> IndexState:
        shm = shared_memory.SharedMemory(name=name)
        capacity = int(np.ndarray(_HEADER_WORDS, np.int64, buffer=shm.buf)[CAPACITY])
        self = cls.__new__(cls)
        self.shm = shm
        self._owner = False
        self.header, self.loc, self.tomb = cls._carve(shm.buf, capacity)
        return self

    def release(self) -> None:
        """Detach (and for the creator, unlink) the shared block, keeping a private copy."""
        if self.shm is None:
            return
        header, loc, tomb = self.header.copy(), self.loc.copy(), self.tomb.copy()
        self.header = self.loc = self.tomb = None  # drop views before closing
        shm, self.shm = self.shm, None
        shm.close()
        if self._owner:
            shm.unlink()
        self.header, self.loc, self.tomb = header, loc, tomb

    # -- sizing --------------------------------------------------------------

    @property
    def capacity(self) -> int:
        return int(self.loc.size)

    def ensure(self, n_ids: int) -> None:
        if n_ids <= self.capacity:
            return
        if self.shm is not None:
            raise StorageError(f"shared state capacity {self.capacity} cannot hold id {n_ids - 1}")
        cap = max(n_ids, 2 * self.capacity)
        loc = np.full(cap, -1, np.int64)
        loc[: self.loc.size] = self.loc
        tomb = np.zeros(cap, np.uint8)
        tomb[: self.tomb.size] = self.tomb
        self.loc, self.tomb = loc, tomb
        self.header[CAPACITY] = cap

    # -- header fields -------------------------------------------------------

    @property
    def entry(self) -> int:
        return int(self.header[ENTRY])

    @entry.setter
    def entry(self, value: int) -> None:
        self.header[ENTRY] = value
