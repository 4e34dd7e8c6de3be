"""Full-scan batch updater used as the comparison target.

Each batch streams the whole query index twice:

1. **delete pass**: read every page in order; any live vertex pointing at a
   deleted one gets its survivors plus the deleted neighbors' lists, pruned
   back to ``R`` unconditionally; every page goes to ``index.tmp``.
2. **insert**: the same search-and-prune insertion as the localized engine,
   against ``index.tmp``, with reverse edges held in memory.
3. **patch pass**: stream ``index.tmp``, merge pending reverse edges, prune
   anything above ``R``, write ``index.new`` and rename it over ``index.dat``.

It shares the page codec, search kernel and pruning routine with the
localized engine, so differences in cost come from the update strategy.
"""

from __future__ import annotations

import os
import time
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .diskindex import DiskIndex, PageBuffer, PageFile
from .errors import UsageError
from .report import BatchReport, PruneCounters, RepairRecord
from .updates import BatchSpec, _EngineBase, _prune

TMP_FILE = "index.tmp"
NEW_FILE = "index.new"
SCAN_CHUNK = 256  # pages per sequential read submission


@dataclass(frozen=True)
class BaselineParams:
    R: int = 32
    alpha: float = 1.2
    L_build: int = 75
    max_c: int = 500
    W: int = 4

    def __post_init__(self) -> None:
        if self.R < 2 or self.alpha < 1.0 or self.L_build < 1 or self.W < 1 or self.max_c < self.R:
            raise UsageError("invalid baseline parameters")


class _Chunk:
    """A block of consecutive pages held in memory during a scan."""

    def __init__(self, first: int, buf: np.ndarray, layout) -> None:
        self.first = first
        self.buf = buf
        self.recs = buf.view(layout.page_dtype()).reshape(-1)["rec"]  # (pages, npp)
        self.npp = layout.nodes_per_page

    def holds(self, gslot: int) -> bool:
        return 0 <= gslot // self.npp - self.first < self.recs.shape[0]

    def at(self, gslot: int) -> tuple[int, int]:
        page, slot = divmod(gslot, self.npp)
        return page - self.first, slot


class BaselineEngine(_EngineBase):
    name = "baseline"

    def __init__(self, index: DiskIndex, params: BaselineParams | None = None) -> None:
        params = params or BaselineParams(R=index.R)
        if params.R > index.r_prime:
            raise UsageError("R exceeds the stored neighbor capacity")
        super().__init__(index, params)
        self.tmp: PageFile | None = None
        self._tmp_words: tuple | None = None

    # -- helpers -------------------------------------------------------------

    def _scan(self, file: PageFile):
        total = file.num_pages
        for first in range(0, total, SCAN_CHUNK):
            ids, buf = file.read(np.arange(first, min(first + SCAN_CHUNK, total)))
            yield _Chunk(first, buf, self.index.layout)

    def _vector(self, vid: int, chunk: _Chunk, fetch: PageBuffer) -> np.ndarray:
        g = self.index.slot_of(vid)
        if chunk.holds(g):
            i, s = chunk.at(g)
            return chunk.recs["vec"][i, s]
        recs, s = fetch.record(g)
        return recs["vec"][s]

    @staticmethod
    def _set(chunk: _Chunk, i: int, s: int, nbrs: list[int]) -> None:
        chunk.recs["deg"][i, s] = len(nbrs)
        row = chunk.recs["nbr"][i, s]
        row[:] = np.uint32(0xFFFFFFFF)
        row[: len(nbrs)] = nbrs

    # -- phases --------------------------------------------------------------

    def fullscan_delete_phase(self, deletes: Iterable[int]) -> PruneCounters:
        ids = np.unique(np.fromiter((int(v) for v in deletes), np.int64))
        self._check_deletes(ids)
        before = self.counters.copy()
        index = self.index
        lay = index.layout
        p = self.params
        with index.ledger.charge("delete"):
            fetch = PageBuffer(index.index_file, lay)
            if ids.size:
                self._capture(ids, fetch)
                self._reassign_entry(ids, fetch)
                self._release(ids)
            gone = set(ids.tolist())
            cap = max(index.state.capacity, int(ids.max()) + 1 if ids.size else 1)
            mask = np.zeros(cap + 1, bool)
            mask[ids] = True
            owners = np.full(index.index_file.num_pages * lay.nodes_per_page, -1, np.int64)
            n_own = min(owners.size, index.slot_owner.size)
            owners[:n_own] = index.slot_owner[:n_own]
            tmp = PageFile(index.path / TMP_FILE, lay.page_size, index.ledger, create=True, durable=index.durable)
            colidx = np.arange(lay.r_prime)
            for chunk in self._scan(index.index_file):
                npg = chunk.recs.shape[0]
                own = owners[chunk.first * lay.nodes_per_page : (chunk.first + npg) * lay.nodes_per_page].reshape(npg, -1)
                deg = chunk.recs["deg"].astype(np.int64)
                nbr = chunk.recs["nbr"]
                free = own < 0
                if free.any():
                    chunk.recs["deg"][free] = 0
                    chunk.recs["nbr"][free] = np.uint32(0xFFFFFFFF)
                if ids.size:
                    hit = mask[np.minimum(nbr, cap)] & (colidx[None, None, :] < deg[:, :, None])
                    rows = np.argwhere(hit.any(axis=2) & ~free)
                    for i, s in rows.tolist():
                        v = int(own[i, s])
                        cur = nbr[i, s][: deg[i, s]].astype(np.int64).tolist()
                        lost = sorted(u for u in cur if u in gone)
                        cand = [u for u in cur if u not in gone]
                        have = set(cand)
                        for d in lost:
                            for u in self.tomb_nbrs[d]:
                                if u not in gone and u != v and u not in have:
                                    cand.append(u)
                                    have.add(u)
                        self.affected[v] = set(lost)
                        if cand:
                            vecs = np.stack([self._vector(u, chunk, fetch) for u in cand])
                            new = _prune(chunk.recs["vec"][i, s].copy(), cand, vecs, p.alpha, p.R, p.max_c)
                        else:
                            new = []
                        self._set(chunk, i, s, new)
                        self.dirty.add(v)
                        self.counters.delete_affected += 1
                        self.counters.delete_prunes += 1
                        if self.repairs is not None:
                            self.repairs.append(RepairRecord(v, len(lost), len(cur), len(new), True, False))
                tmp.write(np.arange(chunk.first, chunk.first + npg), chunk.buf)
            self.tmp = tmp
        return self.counters - before

    def _tmp_view_words(self) -> np.ndarray:
        size = self.tmp.size
        if self._tmp_words is None or self._tmp_words[0] != size:
            mm = np.memmap(self.tmp.path, dtype=np.uint32, mode="r")
            self._tmp_words = (size, mm.view(np.ndarray))
        return self._tmp_words[1]

    def insert_vertex(self, vid: int, x) -> list[int]:
        if self.tmp is None:
            raise UsageError("the delete pass must run before insertions")
        index = self.index
        x = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
        if x.size != index.dim:
            raise UsageError(f"vector has dimension {x.size}, index has {index.dim}")
        if index.is_live(vid):
            raise UsageError(f"cannot insert {vid}: id already live")
        with index.ledger.charge("insert"):
            nout = self._neighbors_for(x, self._tmp_view_words(), self._insert_buffer)
            page, slot = index.allocate_slot(self.tmp)
            g = page * index.layout.nodes_per_page + slot
            self._write_record(self._insert_buffer, g, x, nout)
            self._insert_buffer.flush()
            index.assign(vid, g)
            if index.live_count == 1:
                index.entry = vid
            self.new_vecs[vid] = x
            self.dirty.add(vid)
            for u in nout:
                self.delta.add(self._page_of(u), u, vid)
        return nout

    def fullscan_patch_phase(self) -> PruneCounters:
        if self.tmp is None:
            raise UsageError("the delete pass must run before the patch pass")
        before = self.counters.copy()
        index = self.index
        lay = index.layout
        p = self.params
        pending: dict[int, list[int]] = {}
        for table in self.delta.page_table.values():
            for u, targets in table.items():
                pending[u] = sorted(targets)
        slot_pending = {index.slot_of(u): u for u in pending}
        with index.ledger.charge("patch"):
            fetch = PageBuffer(self.tmp, lay)
            out = PageFile(index.path / NEW_FILE, lay.page_size, index.ledger, create=True, durable=index.durable)
            npp = lay.nodes_per_page
            for chunk in self._scan(self.tmp):
                npg = chunk.recs.shape[0]
                lo, hi = chunk.first * npp, (chunk.first + npg) * npp
                for g in sorted(s for s in slot_pending if lo <= s < hi):
                    u = slot_pending[g]
                    i, s = chunk.at(g)
                    cur = chunk.recs["nbr"][i, s][: chunk.recs["deg"][i, s]].astype(np.int64).tolist()
                    present = set(cur)
                    merged = cur + [t for t in pending[u] if t not in present]
                    self.counters.patch_vertices += 1
                    if len(merged) > p.R:
                        vecs = np.stack([self.new_vecs[w] if w in self.new_vecs else self._vector(w, chunk, fetch) for w in merged])
                        merged = _prune(chunk.recs["vec"][i, s].copy(), merged, vecs, p.alpha, p.R, p.max_c)
                        self.counters.patch_prunes += 1
                    self._set(chunk, i, s, merged)
                    self.dirty.add(u)
                out.write(np.arange(chunk.first, chunk.first + npg), chunk.buf)
            out.close()
            self.tmp.close()
            self._tmp_words = None
            index.swap_index_file(index.path / NEW_FILE)
            os.unlink(index.path / TMP_FILE)
            self.tmp = None
            self.delta.clear()
        return self.counters - before

    def run_batch(self, spec: BatchSpec) -> BatchReport:
        self._check_spec(spec)
        index = self.index
        self._begin()
        self._counters_before = self.counters.copy()
        io_before = index.ledger.snapshot()
        t0 = time.perf_counter()
        index.begin_batch()
        phases = {}
        t = time.perf_counter()
        self.fullscan_delete_phase(spec.deletes)
        phases["delete"] = time.perf_counter() - t
        t = time.perf_counter()
        self._insert_buffer = PageBuffer(self.tmp, index.layout)
        for vid, x in spec.inserts:
            self.insert_vertex(vid, x)
        phases["insert"] = time.perf_counter() - t
        t = time.perf_counter()
        self.fullscan_patch_phase()
        phases["patch"] = time.perf_counter() - t
        report = self._finish(spec, t0, io_before, phases, 0.0)
        # The full-scan design has no topology file of its own; keep ours
        # consistent outside the measured window so audits stay meaningful.
        with index.ledger.uncounted():
            index.sync_topology(self.dirty, None, self.freed)
        return report


def run_batch_baseline(index: DiskIndex, spec: BatchSpec, params: BaselineParams | None = None) -> BatchReport:
    return BaselineEngine(index, params).run_batch(spec)
