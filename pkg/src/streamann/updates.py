"""Localized batch updates: page-local deletion repair, insertion, deferred reverse edges.

A batch runs three phases over one ``DiskIndex``:

* **delete**: find vertices that point at deleted ones by scanning only the
  topology file, then repair each on its own page. A vertex that lost fewer
  than ``T`` neighbors replaces each lost neighbor with that neighbor's
  nearest surviving out-neighbors, filling only free degree slots, so no
  pruning is needed. Heavier losses merge the lost neighbors' lists and
  prune only if the result exceeds ``R``.
* **insert**: search, prune, write the new record, and queue the reverse
  edges in a page-keyed cache.
* **patch**: merge the queued reverse edges page by page, pruning only when a
  list would exceed the relaxed capacity ``R'``.

The topology file is brought back in line at the end of the batch.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import distances, order_by_distance
from .diskindex import DiskIndex, PageBuffer
from .diskindex.pageio import phase_delta
from .errors import UsageError
from .memgraph import SearchParams, search_view
from .report import BatchReport, PruneCounters, RepairRecord, lost_histogram

FREE = _kernels.FREE


@dataclass(frozen=True)
class UpdateParams:
    R: int = 32
    r_prime: int = 33
    T: int = 2
    alpha: float = 1.2
    L_build: int = 75
    max_c: int = 500
    W: int = 4

    def __post_init__(self) -> None:
        if self.R < 2 or self.r_prime < self.R:
            raise UsageError("need 2 <= R <= r_prime")
        if self.T < 1:
            raise UsageError("T must be at least 1")
        if self.alpha < 1.0:
            raise UsageError("alpha must be at least 1")
        if self.L_build < 1 or self.W < 1 or self.max_c < self.R:
            raise UsageError("invalid search or candidate limits")


@dataclass
class BatchSpec:
    deletes: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    insert_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    insert_vectors: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.deletes = np.unique(np.asarray(self.deletes, dtype=np.int64).reshape(-1))
        self.insert_ids = np.asarray(self.insert_ids, dtype=np.int64).reshape(-1)
        if self.insert_vectors is None:
            self.insert_vectors = np.empty((self.insert_ids.size, 0), np.float32)
        self.insert_vectors = np.ascontiguousarray(self.insert_vectors, dtype=np.float32)
        if self.insert_vectors.shape[0] != self.insert_ids.size:
            raise UsageError("one vector per inserted id is required")
        if np.unique(self.insert_ids).size != self.insert_ids.size:
            raise UsageError("inserted ids must be unique within a batch")

    @classmethod
    def make(cls, deletes: Iterable[int] = (), inserts: Sequence[tuple[int, np.ndarray]] = ()) -> BatchSpec:
        inserts = list(inserts)
        ids = np.array([i for i, _ in inserts], np.int64)
        vecs = np.stack([np.asarray(v, np.float32) for _, v in inserts]) if inserts else None
        return cls(np.fromiter((int(d) for d in deletes), np.int64), ids, vecs)

    @property
    def inserts(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.insert_ids.tolist(), self.insert_vectors))

    def __len__(self) -> int:
        return int(self.deletes.size + self.insert_ids.size)


class DeltaG:
    """Pending reverse edges keyed page -> source vertex -> new targets."""

    def __init__(self) -> None:
        self.page_table: dict[int, dict[int, set[int]]] = {}

    def add(self, page: int, source: int, target: int) -> None:
        if source == target:
            raise UsageError("a vertex cannot gain an edge to itself")
        self.page_table.setdefault(int(page), {}).setdefault(int(source), set()).add(int(target))

    def targets(self, source: int, page_of: Callable[[int], int]) -> set[int]:
        return self.page_table.get(page_of(source), {}).get(source, set())

    def sources(self) -> list[int]:
        return sorted(s for table in self.page_table.values() for s in table)

    def edge_count(self) -> int:
        return sum(len(t) for table in self.page_table.values() for t in table.values())

    def clear(self) -> None:
        self.page_table.clear()

    def __len__(self) -> int:
        return sum(len(t) for t in self.page_table.values())


class NeighborRanker:
    """Caches each deleted vertex's out-neighbors sorted by distance to it."""

    def __init__(self, vector_of: Callable[[int], np.ndarray], neighbors_of: Callable[[int], list[int]]) -> None:
        self.vector_of = vector_of
        self.neighbors_of = neighbors_of
        self._cache: dict[int, list[int]] = {}

    def __call__(self, v: int) -> list[int]:
        ranked = self._cache.get(v)
        if ranked is None:
            nbrs = self.neighbors_of(v)
            if nbrs:
                dist = distances(self.vector_of(v), np.stack([self.vector_of(u) for u in nbrs]))
                ids = np.asarray(nbrs, np.int64)
                ranked = ids[order_by_distance(dist, ids)].tolist()
            else:
                ranked = []
            self._cache[v] = ranked
        return ranked


def asnr_repair(
    p: int,
    D: Iterable[int],
    C: Sequence[int],
    params: UpdateParams,
    vector_of: Callable[[int], np.ndarray],
    neighbors_of: Callable[[int], list[int]],
    excluded: Iterable[int] = (),
    ranker: Callable[[int], list[int]] | None = None,
) -> tuple[list[int], bool]:
    """Repair ``p`` after losing the neighbors ``D``; ``C`` are its survivors.

    Returns ``(new_neighbors, pruned)``. ``excluded`` lists every id deleted
    in the batch; none of them (nor ``p`` or existing members) is ever
    added. Replacement never appends more than ``R - |C|`` ids, so a vertex
    on that path never ends above ``R`` and is never pruned.
    """
    D = sorted(set(int(v) for v in D))
    if not D:
        raise UsageError("repair needs at least one lost neighbor")
    C = [int(u) for u in C]
    blocked = set(int(e) for e in excluded) | set(D) | {int(p)}
    have = set(C)
    out = list(C)
    if len(D) < params.T:
        ranker = ranker or NeighborRanker(vector_of, neighbors_of)
        slot = max(params.R - len(C), 0)
        k_slot = max(slot // (len(C) + len(D)), 1)
        budget = slot
        for v in D:
            taken = 0
            for u in ranker(v):
                if budget == 0 or taken == k_slot:
                    break
                if u in blocked or u in have:
                    continue
                out.append(u)
                have.add(u)
                taken += 1
                budget -= 1
        return out, False
    for v in D:
        for u in neighbors_of(v):
            if u not in blocked and u not in have:
                out.append(u)
                have.add(u)
    if len(out) > params.R:
        vecs = np.stack([vector_of(u) for u in out])
        kept = _kernels.robust_prune(
            np.ascontiguousarray(vector_of(p), np.float32),
            np.asarray(out, np.int64),
            vecs,
            float(params.alpha),
            params.R,
            params.max_c,
        )
        return kept.tolist(), True
    return out, False


def _prune(vec: np.ndarray, ids: list[int], vecs: np.ndarray, alpha: float, R: int, max_c: int) -> list[int]:
    return _kernels.robust_prune(vec, np.asarray(ids, np.int64), np.ascontiguousarray(vecs), float(alpha), R, max_c).tolist()


class _EngineBase:
    """Bookkeeping shared by the localized and full-scan engines."""

    name = ""

    def __init__(self, index: DiskIndex, params) -> None:
        self.index = index
        self.params = params
        self.counters = PruneCounters()
        self.trace = False
        self._begin()

    def _begin(self) -> None:
        self.buffer: PageBuffer = self.index.buffer()
        self.tomb_vecs: dict[int, np.ndarray] = {}
        self.tomb_nbrs: dict[int, list[int]] = {}
        self.new_vecs: dict[int, np.ndarray] = {}
        self.dirty: set[int] = set()
        self.freed: list[int] = []
        self.deleted = np.empty(0, np.int64)
        self.delta = DeltaG()
        self.page_seen = np.zeros(0, np.uint8)
        self.affected: dict[int, set[int]] = {}
        self.repairs: list[RepairRecord] | None = [] if self.trace else None

    # -- validation ----------------------------------------------------------

    def _check_deletes(self, ids: np.ndarray) -> None:
        for v in ids.tolist():
            if not self.index.is_live(v):
                raise UsageError(f"cannot delete {v}: not a live vertex")

    def _check_spec(self, spec: BatchSpec) -> None:
        self._check_deletes(spec.deletes)
        if spec.insert_ids.size and spec.insert_vectors.shape[1] != self.index.dim:
            raise UsageError(f"inserted vectors have dimension {spec.insert_vectors.shape[1]}, index has {self.index.dim}")
        deleting = set(spec.deletes.tolist())
        for v in spec.insert_ids.tolist():
            if v < 0 or v > 0xFFFFFFFE:
                raise UsageError(f"id {v} out of range")
            if self.index.is_live(v) and v not in deleting:
                raise UsageError(f"cannot insert {v}: id already live")

    # -- deletion helpers ----------------------------------------------------

    def _page_of(self, vid: int) -> int:
        return self.index.slot_of(vid) // self.index.layout.nodes_per_page

    def _capture(self, ids: np.ndarray, buffer: PageBuffer) -> None:
        """Tombstone ``ids`` and keep their vectors and lists for the batch."""
        self.index.state.tomb[ids] = 1
        buffer.fetch({self._page_of(v) for v in ids.tolist()})
        for v in ids.tolist():
            recs, s = buffer.record(self.index.slot_of(v))
            self.tomb_vecs[v] = recs["vec"][s].copy()
            self.tomb_nbrs[v] = recs["nbr"][s][: recs["deg"][s]].astype(np.int64).tolist()

    def _reassign_entry(self, ids: np.ndarray, buffer: PageBuffer) -> None:
        old = self.index.entry
        gone = set(ids.tolist())
        if old not in gone:
            return
        cands = [u for u in self.tomb_nbrs[old] if u not in gone and self.index.is_live(u)]
        if cands:
            buffer.fetch({self._page_of(u) for u in cands})
            vecs = np.stack([self._live_vec(u, buffer) for u in cands])
            dist = distances(self.tomb_vecs[old], vecs)
            cid = np.asarray(cands, np.int64)
            self.index.entry = int(cid[order_by_distance(dist, cid)[0]])
            return
        live = self.index.live_ids()
        survivors = live[~np.isin(live, ids)]
        if survivors.size:
            self.index.entry = int(survivors[0])

    def _release(self, ids: np.ndarray) -> None:
        for v in ids.tolist():
            self.freed.append(self.index.release(v))

    def _live_vec(self, vid: int, buffer: PageBuffer | None = None) -> np.ndarray:
        recs, s = (buffer or self.buffer).record(self.index.slot_of(vid))
        return recs["vec"][s]

    # -- insertion -----------------------------------------------------------

    def _neighbors_for(self, x: np.ndarray, words: np.ndarray | None = None, held: PageBuffer | None = None) -> list[int]:
        """Search from the entry and prune the expanded set into an out-list.

        Pages already in ``held`` (this batch's page buffer) are in memory,
        so the search is not charged for reading them again.
        """
        index = self.index
        if index.live_count == 0:
            return []
        pages = (index.index_file.size if words is None else words.size * 4) // index.layout.page_size
        if self.page_seen.size < pages:
            grown = np.zeros(pages, np.uint8)
            grown[: self.page_seen.size] = self.page_seen
            self.page_seen = grown
        if held is not None and held.raw:
            in_memory = np.fromiter(held.raw.keys(), np.int64, len(held.raw))
            self.page_seen[in_memory[in_memory < self.page_seen.size]] = 1
        sp = SearchParams(L_search=self.params.L_build, W=self.params.W, k=1)
        if words is None:
            res = index.search(x, sp, page_seen=self.page_seen, phase="insert")
        else:
            res = search_view(index.view(words), x, sp, index.state.tomb, self.page_seen)
            index.ledger.add(read_pages=res.pages, read_bytes=res.pages * index.layout.page_size)
        visited = [int(v) for v in res.visited.tolist() if index.is_live(int(v))]
        if not visited:
            return []
        vecs = index.vectors(visited, words)
        return _prune(x, visited, vecs, self.params.alpha, self.params.R, self.params.max_c)

    def _write_record(self, buffer: PageBuffer, gslot: int, vec: np.ndarray | None, nbrs: list[int]) -> None:
        recs, s = buffer.record(gslot)
        if vec is not None:
            recs["vec"][s] = vec
        recs["deg"][s] = len(nbrs)
        row = recs["nbr"][s]
        row[:] = FREE
        row[: len(nbrs)] = nbrs
        buffer.mark_dirty(gslot // self.index.layout.nodes_per_page)

    def _finish(self, spec: BatchSpec, t0: float, io_before, phases: dict[str, float], sync_s: float) -> BatchReport:
        index = self.index
        index.state.tomb[spec.deletes] = 0
        wall = time.perf_counter() - t0
        total, by_phase = index.ledger.snapshot()
        rep = BatchReport(
            batch_index=index.generation,
            engine=self.name,
            deletes=int(spec.deletes.size),
            inserts=int(spec.insert_ids.size),
            wall_seconds=wall,
            updates_per_second=(len(spec) / wall) if wall > 0 else 0.0,
            io=total - io_before[0],
            io_by_phase=phase_delta(io_before[1], by_phase),
            prunes=self.counters - self._counters_before,
            phase_seconds=phases,
            topology_sync_seconds=sync_s,
            lost_histogram=lost_histogram(self.affected),
            repairs=self.repairs,
        )
        return rep


class LocalizedEngine(_EngineBase):
    """Topology-scan deletion, replacement-first repair, page-grouped patching."""

    name = "localized"

    def __init__(self, index: DiskIndex, params: UpdateParams | None = None) -> None:
        params = params or UpdateParams(R=index.R, r_prime=index.r_prime)
        if params.r_prime > index.r_prime:
            raise UsageError(f"index stores at most {index.r_prime} neighbors, params ask for {params.r_prime}")
        super().__init__(index, params)

    def _vec(self, vid: int) -> np.ndarray:
        v = self.tomb_vecs.get(vid)
        return v if v is not None else self._live_vec(vid)

    def _list_of(self, vid: int) -> list[int]:
        if vid in self.tomb_nbrs:
            return self.tomb_nbrs[vid]
        recs, s = self.buffer.record(self.index.slot_of(vid))
        return recs["nbr"][s][: recs["deg"][s]].astype(np.int64).tolist()

    # -- phases --------------------------------------------------------------

    def delete_batch(self, deletes: Iterable[int]) -> PruneCounters:
        ids = np.unique(np.fromiter((int(v) for v in deletes), np.int64))
        self._check_deletes(ids)
        before = self.counters.copy()
        if ids.size == 0:
            return PruneCounters()
        index = self.index
        npp = index.layout.nodes_per_page
        with index.ledger.charge("delete"):
            self.deleted = ids
            self._capture(ids, self.buffer)
            self._reassign_entry(ids, self.buffer)
            self._release(ids)
            affected = index.scan_topology(ids)
            self.affected = affected
            pages = {index.slot_of(p) // npp for p in affected}
            for v in ids.tolist():
                pages.update(index.slot_of(u) // npp for u in self.tomb_nbrs[v] if index.is_live(u))
            self.buffer.fetch(pages)
            gone = set(ids.tolist())
            ranker = NeighborRanker(self._vec, lambda v: [u for u in self.tomb_nbrs[v] if u not in gone])
            for p in sorted(affected):
                D = affected[p]
                g = index.slot_of(p)
                current = self._list_of(p)
                C = [u for u in current if u not in D]
                if len(D) >= self.params.T:
                    self.buffer.fetch({index.slot_of(u) // npp for u in C})
                new, pruned = asnr_repair(p, D, C, self.params, self._vec, self._list_of, gone, ranker)
                self._write_record(self.buffer, g, None, new)
                self.dirty.add(p)
                self.counters.delete_affected += 1
                self.counters.delete_prunes += int(pruned)
                if self.repairs is not None:
                    self.repairs.append(RepairRecord(p, len(D), len(current), len(new), pruned, len(D) < self.params.T))
            self.buffer.flush()
        return self.counters - before

    def insert_vertex(self, vid: int, x) -> list[int]:
        index = self.index
        x = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
        if x.size != index.dim:
            raise UsageError(f"vector has dimension {x.size}, index has {index.dim}")
        if index.is_live(vid):
            raise UsageError(f"cannot insert {vid}: id already live")
        with index.ledger.charge("insert"):
            nout = self._neighbors_for(x, held=self.buffer)
            page, slot = index.allocate_slot()
            g = page * index.layout.nodes_per_page + slot
            self._write_record(self.buffer, g, x, nout)
            self.buffer.flush()
            index.assign(vid, g)
            if index.live_count == 1:
                index.entry = vid
            self.new_vecs[vid] = x
            self.dirty.add(vid)
            for u in nout:
                self.delta.add(self._page_of(u), u, vid)
        return nout

    def patch(self) -> PruneCounters:
        before = self.counters.copy()
        if not self.delta.page_table:
            return PruneCounters()
        index = self.index
        p = self.params
        with index.ledger.charge("patch"):
            pages = sorted(self.delta.page_table)
            self.buffer.fetch(pages)
            for page in pages:
                table = self.delta.page_table[page]
                for u in sorted(table):
                    current = self._list_of(u)
                    present = set(current)
                    merged = current + [t for t in sorted(table[u]) if t not in present]
                    self.counters.patch_vertices += 1
                    if len(merged) > p.r_prime:
                        olds = [w for w in merged if w not in self.new_vecs]
                        self.buffer.fetch({self._page_of(w) for w in olds})
                        vecs = np.stack([self.new_vecs[w] if w in self.new_vecs else self._live_vec(w) for w in merged])
                        merged = _prune(self._live_vec(u).copy(), merged, vecs, p.alpha, p.R, p.max_c)
                        self.counters.patch_prunes += 1
                    self._write_record(self.buffer, index.slot_of(u), None, merged)
                    self.dirty.add(u)
            self.buffer.flush()
            self.delta.clear()
        return self.counters - before

    def run_batch(self, spec: BatchSpec) -> BatchReport:
        """Delete, insert, patch, then resynchronize the topology file."""
        self._check_spec(spec)
        index = self.index
        self._begin()
        self._counters_before = self.counters.copy()
        io_before = index.ledger.snapshot()
        t0 = time.perf_counter()
        index.begin_batch()
        phases = {}
        t = time.perf_counter()
        self.delete_batch(spec.deletes)
        phases["delete"] = time.perf_counter() - t
        t = time.perf_counter()
        for vid, x in spec.inserts:
            self.insert_vertex(vid, x)
        phases["insert"] = time.perf_counter() - t
        t = time.perf_counter()
        self.patch()
        phases["patch"] = time.perf_counter() - t
        t = time.perf_counter()
        with index.ledger.charge("sync"):
            index.sync_topology(self.dirty, self.buffer, self.freed)
        sync_s = time.perf_counter() - t
        phases["sync"] = sync_s
        return self._finish(spec, t0, io_before, phases, sync_s)


def run_batch(index: DiskIndex, spec: BatchSpec, params: UpdateParams | None = None) -> BatchReport:
    return LocalizedEngine(index, params).run_batch(spec)
