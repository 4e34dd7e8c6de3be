"""Page-granular file access with byte accounting and per-page locks.

Page requests are deduplicated, sorted and coalesced into contiguous runs,
each run issued as one vectored ``preadv``/``pwritev`` call. Locks are Linux
open-file-description locks on a page's byte range: they are owned by the
file descriptor rather than the process, so every reader thread or process
that opens its own descriptor gets independent shared locks, and the writer's
exclusive lock excludes all of them.
"""

from __future__ import annotations

import contextlib
import fcntl
import os
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import StorageError, UsageError

F_OFD_SETLKW = getattr(fcntl, "F_OFD_SETLKW", 38)
_FLOCK = "hhqqi4x"


@dataclass
class IoCounters:
    read_bytes: int = 0
    write_bytes: int = 0
    read_pages: int = 0
    write_pages: int = 0
    topology_read_bytes: int = 0
    topology_write_bytes: int = 0
    topology_write_pages: int = 0

    def copy(self) -> IoCounters:
        return IoCounters(**asdict(self))

    def __add__(self, other: IoCounters) -> IoCounters:
        return IoCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def __sub__(self, other: IoCounters) -> IoCounters:
        return IoCounters(**{f.name: getattr(self, f.name) - getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict[str, int]:
        return asdict(self)

    @property
    def total_read_bytes(self) -> int:
        return self.read_bytes + self.topology_read_bytes

    @property
    def total_write_bytes(self) -> int:
        return self.write_bytes + self.topology_write_bytes


class IoLedger:
    """Running totals plus a per-phase breakdown.

    ``phase`` names the bucket that new I/O is charged to; ``paused`` turns
    accounting off for housekeeping such as audits.
    """

    def __init__(self) -> None:
        self.total = IoCounters()
        self.by_phase: dict[str, IoCounters] = {}
        self.phase = "other"
        self.paused = 0

    def add(self, **deltas: int) -> None:
        if self.paused:
            return
        bucket = self.by_phase.setdefault(self.phase, IoCounters())
        for name, value in deltas.items():
            setattr(self.total, name, getattr(self.total, name) + value)
            setattr(bucket, name, getattr(bucket, name) + value)

    def snapshot(self) -> tuple[IoCounters, dict[str, IoCounters]]:
        return self.total.copy(), {k: v.copy() for k, v in self.by_phase.items()}

    @contextlib.contextmanager
    def charge(self, phase: str):
        prev, self.phase = self.phase, phase
        try:
            yield
        finally:
            self.phase = prev

    @contextlib.contextmanager
    def uncounted(self):
        self.paused += 1
        try:
            yield
        finally:
            self.paused -= 1


def phase_delta(before: dict[str, IoCounters], after: dict[str, IoCounters]) -> dict[str, IoCounters]:
    out = {}
    for name, cur in after.items():
        prev = before.get(name, IoCounters())
        diff = cur - prev
        if any(diff.as_dict().values()):
            out[name] = diff
    return out


def lock_range(fd: int, start: int, length: int, exclusive: bool) -> None:
    ltype = fcntl.F_WRLCK if exclusive else fcntl.F_RDLCK
    fcntl.fcntl(fd, F_OFD_SETLKW, struct.pack(_FLOCK, ltype, os.SEEK_SET, start, length, 0))


def unlock_range(fd: int, start: int, length: int) -> None:
    fcntl.fcntl(fd, F_OFD_SETLKW, struct.pack(_FLOCK, fcntl.F_UNLCK, os.SEEK_SET, start, length, 0))


def runs(sorted_ids: np.ndarray) -> list[tuple[int, int, int]]:
    """Split sorted unique ids into ``(start_index, first_id, length)`` runs."""
    if sorted_ids.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(sorted_ids) != 1) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [sorted_ids.size]))
    return list(zip(starts.tolist(), sorted_ids[starts].tolist(), (ends - starts).tolist()))


class PageFile:
    """A file of fixed-size pages.

    ``kind`` selects which counters I/O is charged to: ``"index"`` for query
    index files, ``"topology"`` for the adjacency-only file.
    """

    def __init__(self, path: str | os.PathLike, page_size: int, ledger: IoLedger, *, create: bool = False, kind: str = "index", durable: bool = True) -> None:
        self.path = os.fspath(path)
        self.page_size = page_size
        self.ledger = ledger
        self.kind = kind
        self.durable = durable
        flags = os.O_RDWR | (os.O_CREAT | os.O_TRUNC if create else 0)
        try:
            self.fd = os.open(self.path, flags, 0o644)
        except OSError as exc:
            raise StorageError(f"cannot open {self.path}: {exc}") from exc

    @property
    def size(self) -> int:
        return os.fstat(self.fd).st_size

    @property
    def num_pages(self) -> int:
        return self.size // self.page_size

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1

    def _count_read(self, pages: int) -> None:
        if self.kind == "index":
            self.ledger.add(read_bytes=pages * self.page_size, read_pages=pages)
        else:
            self.ledger.add(topology_read_bytes=pages * self.page_size)

    def _count_write(self, pages: int) -> None:
        if self.kind == "index":
            self.ledger.add(write_bytes=pages * self.page_size, write_pages=pages)
        else:
            self.ledger.add(topology_write_bytes=pages * self.page_size, topology_write_pages=pages)

    def read(self, page_ids) -> tuple[np.ndarray, np.ndarray]:
        """Read distinct pages in one coalesced submission.

        Returns ``(sorted_unique_ids, buffer)`` with ``buffer[i]`` holding
        page ``sorted_unique_ids[i]``.
        """
        ids = np.unique(np.asarray(page_ids, dtype=np.int64).reshape(-1))
        buf = np.empty((ids.size, self.page_size), np.uint8)
        if ids.size == 0:
            return ids, buf
        if ids[0] < 0 or ids[-1] >= self.num_pages:
            raise UsageError(f"page id out of bounds (file has {self.num_pages} pages)")
        for start, first, length in runs(ids):
            view = memoryview(buf[start : start + length]).cast("B")
            try:
                got = os.preadv(self.fd, [view], first * self.page_size)
            except OSError as exc:
                raise StorageError(f"read failed on {self.path}: {exc}") from exc
            if got != length * self.page_size:
                raise StorageError(f"short read on {self.path}: {got} of {length * self.page_size} bytes")
        self._count_read(int(ids.size))
        return ids, buf

    def write(self, page_ids: np.ndarray, buf: np.ndarray) -> None:
        """Write pages (ids sorted ascending, unique), locking each page exclusively."""
        ids = np.asarray(page_ids, dtype=np.int64)
        if ids.size == 0:
            return
        if buf.shape != (ids.size, self.page_size):
            raise UsageError("page payloads must be exactly one page each")
        if np.any(np.diff(ids) <= 0) or ids[0] < 0:
            raise UsageError("page ids must be unique, ascending and non-negative")
        ps = self.page_size
        for start, first, length in runs(ids):
            for p in range(first, first + length):
                lock_range(self.fd, p * ps, ps, True)
            try:
                view = memoryview(np.ascontiguousarray(buf[start : start + length])).cast("B")
                got = os.pwritev(self.fd, [view], first * ps)
            except OSError as exc:
                raise StorageError(f"write failed on {self.path}: {exc}") from exc
            finally:
                for p in range(first, first + length):
                    unlock_range(self.fd, p * ps, ps)
            if got != length * ps:
                raise StorageError(f"short write on {self.path}")
        self.sync()
        self._count_write(int(ids.size))

    def write_bytes_at(self, offset: int, payload: bytes | memoryview) -> None:
        """Unlocked, uncounted positional write (callers account for it)."""
        try:
            got = os.pwrite(self.fd, payload, offset)
        except OSError as exc:
            raise StorageError(f"write failed on {self.path}: {exc}") from exc
        if got != len(payload):
            raise StorageError(f"short write on {self.path}")

    def sync(self) -> None:
        if self.durable:
            try:
                os.fdatasync(self.fd)
            except OSError as exc:
                raise StorageError(f"flush failed on {self.path}: {exc}") from exc

    def extend_to(self, num_pages: int) -> None:
        if num_pages > self.num_pages:
            try:
                os.ftruncate(self.fd, num_pages * self.page_size)
            except OSError as exc:
                raise StorageError(f"cannot grow {self.path}: {exc}") from exc
