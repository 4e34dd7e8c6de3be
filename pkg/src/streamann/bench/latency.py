"""Search tail latency with and without a concurrent update batch.

A separate searcher process attaches to the writer's shared location state
and issues queries on a fixed open-loop schedule; each latency runs from a
query's scheduled start to its completion, so queueing behind a slow query
counts. The update batches run in a writer thread at the lowest CPU
priority, mirroring a deployment that favors foreground search.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..diskindex import DiskIndex, IndexReader
from ..memgraph import SearchParams
from .stats import percentiles

WRITER_NICE = 19


def _searcher(path: str, shm_name: str, queries: np.ndarray, params: SearchParams, rate: float, count: int, warmup: int, conn) -> None:
    reader = IndexReader(path, shm_name)
    try:
        for i in range(warmup):
            reader.search(queries[i % len(queries)], params)
        conn.send("ready")
        conn.recv()
        lat = []
        start = time.monotonic()
        for i in range(count):
            due = start + i / rate
            now = time.monotonic()
            if now < due:
                time.sleep(due - now)
            reader.search(queries[i % len(queries)], params)
            lat.append(time.monotonic() - due)
        conn.send(lat)
    finally:
        reader.close()


def _receive(conn):
    try:
        return conn.recv()
    except EOFError:
        raise RuntimeError("searcher process exited early") from None


@dataclass
class LatencyRun:
    latencies_us: list[float]
    batches: int = 0

    @property
    def tails(self) -> dict[str, float]:
        return percentiles(self.latencies_us)


def service_time(index: DiskIndex, queries: np.ndarray, params: SearchParams, probes: int = 20) -> float:
    """Mean seconds per query of the cross-process reader on an idle index."""
    name = index.share()
    with IndexReader(index.path, name) as reader:
        reader.search(queries[0], params)
        t0 = time.monotonic()
        for i in range(probes):
            reader.search(queries[i % len(queries)], params)
        return (time.monotonic() - t0) / probes


def measure(
    index: DiskIndex,
    queries: np.ndarray,
    params: SearchParams,
    *,
    rate: float,
    count: int,
    next_batch: Callable[[], object] | None = None,
    warmup: int = 10,
) -> LatencyRun:
    """Run ``count`` open-loop queries at ``rate`` per second from another process.

    With ``next_batch`` the writer keeps running batches (each call runs
    one) until the searcher finishes.
    """
    name = index.share()
    ctx = mp.get_context("spawn")
    parent, child = ctx.Pipe()
    proc = ctx.Process(target=_searcher, args=(str(index.path), name, np.ascontiguousarray(queries), params, rate, count, warmup, child), daemon=True)
    proc.start()
    child.close()  # so a dead searcher shows up as EOF instead of a hang
    try:
        if _receive(parent) != "ready":
            raise RuntimeError("searcher failed to start")
        done = threading.Event()
        batches = [0]
        errors: list[BaseException] = []

        def writer() -> None:
            try:
                os.setpriority(os.PRIO_PROCESS, threading.get_native_id(), WRITER_NICE)
            except OSError:
                pass
            try:
                while not done.is_set():
                    next_batch()
                    batches[0] += 1
            except BaseException as exc:  # surfaced to the caller below
                errors.append(exc)

        thread = None
        if next_batch is not None:
            thread = threading.Thread(target=writer, name="batch-writer")
        parent.send("go")
        if thread is not None:
            thread.start()
        try:
            lat = _receive(parent)
        finally:
            done.set()
        if thread is not None:
            thread.join()
        if errors:
            raise errors[0]
        proc.join(timeout=30)
        return LatencyRun([t * 1e6 for t in lat], batches[0])
    finally:
        if proc.is_alive():
            proc.terminate()
            proc.join()
