"""The on-disk index: node-record pages, adjacency-only topology file, location map.

Directory layout::

    index.dat      node records, ``nodes_per_page`` to a page
    topology.dat   one fixed-stride row per slot: owner id, degree, sync epoch, neighbors
    meta.json      dimensions, limits, entry vertex, live count, free-slot queue

Vertex ids are external ids. A *global slot* ``g`` addresses page
``g // nodes_per_page``, slot ``g % nodes_per_page``; topology row ``g``
mirrors the neighbor fields of the record in slot ``g``.
"""

from __future__ import annotations

import collections
import json
import os
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import VectorDataset
from ..errors import StorageError, UsageError
from ..memgraph import GraphView, MemGraph, SearchParams, SearchResult, search_view
from .layout import FORMAT_VERSION, FREE, PAGE_SIZE, PageLayout
from .pageio import IoCounters, IoLedger, PageFile, runs
from .state import GENERATION, LIVE, TAIL, IndexState

INDEX_FILE = "index.dat"
TOPOLOGY_FILE = "topology.dat"
META_FILE = "meta.json"
_WRITE_CHUNK = 2048  # pages per write submission during bulk writes


@dataclass
class AuditReport:
    violations: list[str] = field(default_factory=list)
    live: int = 0
    allocated: int = 0
    free: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


class PageBuffer:
    """Batch-scoped page cache over one page file.

    Reads go through one coalesced submission per ``fetch``; modified pages
    are marked dirty and written together by ``flush``.
    """

    def __init__(self, file: PageFile, layout: PageLayout) -> None:
        self.file = file
        self.layout = layout
        self._dtype = layout.page_dtype()
        self.raw: dict[int, np.ndarray] = {}
        self.recs: dict[int, np.ndarray] = {}
        self.dirty: set[int] = set()

    def fetch(self, page_ids: Iterable[int]) -> None:
        missing = {int(p) for p in page_ids} - self.raw.keys()
        if not missing:
            return
        ids, buf = self.file.read(sorted(missing))
        for i, p in enumerate(ids.tolist()):
            self._adopt(p, buf[i])

    def _adopt(self, page: int, raw: np.ndarray) -> None:
        self.raw[page] = raw
        self.recs[page] = raw.view(self._dtype)["rec"][0]

    def page(self, page: int) -> np.ndarray:
        if page not in self.recs:
            self.fetch([page])
        return self.recs[page]

    def record(self, gslot: int) -> tuple[np.ndarray, int]:
        page, slot = divmod(int(gslot), self.layout.nodes_per_page)
        return self.page(page), slot

    def mark_dirty(self, page: int) -> None:
        self.dirty.add(int(page))

    def flush(self) -> int:
        if not self.dirty:
            return 0
        ids = np.array(sorted(self.dirty), np.int64)
        self.file.write(ids, np.stack([self.raw[p] for p in ids.tolist()]))
        self.dirty.clear()
        return int(ids.size)


class DiskIndex:
    """Persistent page-aligned index with a decoupled topology file."""

    def __init__(self, path: Path, layout: PageLayout, R: int, meta: dict, *, durable: bool = True) -> None:
        self.path = Path(path)
        self.layout = layout
        self.R = int(R)
        self.durable = durable
        self.ledger = IoLedger()
        self.index_file = PageFile(self.path / INDEX_FILE, layout.page_size, self.ledger, durable=durable)
        self.topo_file = PageFile(self.path / TOPOLOGY_FILE, layout.page_size, self.ledger, kind="topology", durable=durable)
        self.state = IndexState(1)
        self.slot_owner = np.full(0, -1, np.int64)
        self.free_queue: collections.deque[int] = collections.deque()
        self._mm: tuple | None = None
        # topology bytes read by this batch's scan, reused to coalesce the sync
        self._topo_image: tuple[int, np.ndarray] | None = None
        self._closed = False
        self._load_state(meta)

    # ------------------------------------------------------------------ setup

    @classmethod
    def create(
        cls,
        graph: MemGraph,
        dataset: VectorDataset,
        path: str | os.PathLike,
        r_prime: int | None = None,
        *,
        page_size: int = PAGE_SIZE,
        durable: bool = True,
    ) -> DiskIndex:
        """Write a built graph to ``path``; graph vertex ``i`` is dataset row ``i``."""
        if graph.n != dataset.count or graph.vectors.shape[1] != dataset.dim:
            raise UsageError("graph and dataset are not aligned")
        if dataset.count == 0:
            raise UsageError("cannot create an empty index")
        R = int(graph.R)
        r_prime = int(r_prime if r_prime is not None else R + 1)
        if r_prime < R:
            raise UsageError("relaxed capacity must be at least R")
        if int(graph.degree.max()) > r_prime:
            raise UsageError(f"a vertex has degree {int(graph.degree.max())} > capacity {r_prime}")
        layout = PageLayout(dataset.dim, r_prime, page_size)
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)

        n = dataset.count
        ids = dataset.ids.astype(np.int64)
        order = np.argsort(ids, kind="stable")
        npp = layout.nodes_per_page
        num_pages = -(-n // npp)

        cap = graph.adjacency.shape[1]
        nbr_rows = np.full((n, r_prime), FREE, np.uint32)
        adj = graph.adjacency[order]
        deg = graph.degree[order].astype(np.int64)
        valid = np.arange(cap)[None, :] < deg[:, None]
        mapped = np.where(valid, ids[np.where(valid, adj, 0).astype(np.int64)], FREE).astype(np.uint32)
        nbr_rows[:, : min(cap, r_prime)] = mapped[:, :r_prime]

        flat = np.zeros(num_pages * npp, layout.record_dtype())
        flat["nbr"] = FREE
        flat["vec"][:n] = dataset.data[order]
        flat["deg"][:n] = deg
        flat["nbr"][:n] = nbr_rows
        pages = layout.empty_pages(num_pages)
        pages["rec"] = flat.reshape(num_pages, npp)
        raw = pages.view(np.uint8).reshape(num_pages, page_size)

        topo = np.zeros(n, layout.topo_dtype())
        topo["owner"] = ids[order]
        topo["deg"] = deg
        topo["nbr"] = nbr_rows

        ledger = IoLedger()
        idx_file = PageFile(path / INDEX_FILE, page_size, ledger, create=True, durable=durable)
        try:
            for s in range(0, num_pages, _WRITE_CHUNK):
                e = min(s + _WRITE_CHUNK, num_pages)
                idx_file.write(np.arange(s, e), raw[s:e])
        finally:
            idx_file.close()
        topo_file = PageFile(path / TOPOLOGY_FILE, page_size, ledger, create=True, kind="topology", durable=durable)
        try:
            topo_file.write_bytes_at(0, topo.tobytes())
            topo_file.sync()
        finally:
            topo_file.close()
        meta = {
            "format_version": FORMAT_VERSION,
            "dim": layout.dim,
            "R": R,
            "r_prime": r_prime,
            "page_size": page_size,
            "entry": int(ids[graph.entry]),
            "live_count": n,
            "tail": n,
            "generation": 0,
            "free_queue": [],
            "clean": True,
        }
        _write_meta(path, meta)
        return cls.open(path, durable=durable)

    @classmethod
    def open(cls, path: str | os.PathLike, *, durable: bool = True) -> DiskIndex:
        path = Path(path)
        try:
            meta = json.loads((path / META_FILE).read_text())
        except FileNotFoundError as exc:
            raise StorageError(f"{path}: not an index directory") from exc
        except json.JSONDecodeError as exc:
            raise StorageError(f"{path}: unreadable metadata") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise StorageError(f"{path}: unsupported format version {meta.get('format_version')}")
        layout = PageLayout(int(meta["dim"]), int(meta["r_prime"]), int(meta["page_size"]))
        index = cls(path, layout, int(meta["R"]), meta, durable=durable)
        _write_meta(path, dict(meta, clean=False))
        return index

    def _load_state(self, meta: dict) -> None:
        tail = int(meta["tail"])
        rows = self._topology_rows(counted=False)
        if rows.shape[0] < tail:
            raise StorageError("topology file is shorter than the allocated slot range")
        owners = rows["owner"][:tail].astype(np.int64)
        live_slots = np.flatnonzero(owners != int(FREE))
        live_ids = owners[live_slots]
        if np.unique(live_ids).size != live_ids.size:
            raise StorageError("topology file assigns one id to two slots")
        cap = int(live_ids.max()) + 1 if live_ids.size else 1
        self.state = IndexState(max(cap, 1))
        self.state.loc[live_ids] = live_slots
        self.slot_owner = np.full(max(tail, 1), -1, np.int64)
        self.slot_owner[live_slots] = live_ids
        if meta.get("clean", False):
            fq = [int(g) for g in meta["free_queue"]]
        else:
            fq = np.flatnonzero(owners == int(FREE)).tolist()
        self.free_queue = collections.deque(fq)
        self.state.header[TAIL] = tail
        self.state.header[LIVE] = live_ids.size
        self.state.header[GENERATION] = int(meta.get("generation", 0))
        self.state.entry = int(meta["entry"])

    def close(self) -> None:
        if self._closed:
            return
        _write_meta(self.path, self.meta(clean=True))
        self._mm = None
        self.state.release()
        self.index_file.close()
        self.topo_file.close()
        self._closed = True

    def __enter__(self) -> DiskIndex:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def meta(self, clean: bool = False) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "dim": self.layout.dim,
            "R": self.R,
            "r_prime": self.layout.r_prime,
            "page_size": self.layout.page_size,
            "entry": self.entry,
            "live_count": self.live_count,
            "tail": self.tail,
            "generation": self.generation,
            "free_queue": list(self.free_queue),
            "clean": clean,
        }

    def share(self, capacity: int | None = None) -> str:
        """Expose the location map and tombstones to other processes."""
        return self.state.share(capacity)

    # -------------------------------------------------------------- properties

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def r_prime(self) -> int:
        return self.layout.r_prime

    @property
    def entry(self) -> int:
        return self.state.entry

    @entry.setter
    def entry(self, value: int) -> None:
        self.state.entry = int(value)

    @property
    def live_count(self) -> int:
        return int(self.state.header[LIVE])

    @property
    def tail(self) -> int:
        return int(self.state.header[TAIL])

    @property
    def generation(self) -> int:
        return int(self.state.header[GENERATION])

    def begin_batch(self) -> int:
        self.state.header[GENERATION] += 1
        return self.generation

    @property
    def num_pages(self) -> int:
        return self.index_file.num_pages

    @property
    def io(self) -> IoCounters:
        return self.ledger.total

    # ------------------------------------------------------------ location map

    def is_live(self, vid: int) -> bool:
        return 0 <= vid < self.state.capacity and self.state.loc[vid] >= 0

    def slot_of(self, vid: int) -> int:
        if not self.is_live(vid):
            raise UsageError(f"vertex {vid} is not live")
        return int(self.state.loc[vid])

    def location(self, vid: int) -> tuple[int, int]:
        return self.layout.locate(self.slot_of(vid))

    def owner(self, page: int, slot: int) -> int | None:
        g = page * self.layout.nodes_per_page + slot
        if g >= self.slot_owner.size or self.slot_owner[g] < 0:
            return None
        return int(self.slot_owner[g])

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self.state.loc >= 0)

    def assign(self, vid: int, gslot: int) -> None:
        if vid < 0 or vid > 0xFFFFFFFE:
            raise UsageError(f"id {vid} out of range")
        self.state.ensure(vid + 1)
        if self.state.loc[vid] >= 0:
            raise UsageError(f"vertex {vid} is already live")
        if gslot >= self.slot_owner.size:
            grown = np.full(max(gslot + 1, 2 * self.slot_owner.size), -1, np.int64)
            grown[: self.slot_owner.size] = self.slot_owner
            self.slot_owner = grown
        self.slot_owner[gslot] = vid
        self.state.loc[vid] = gslot
        self.state.header[LIVE] += 1

    def release(self, vid: int) -> int:
        """Drop ``vid`` from the location map and queue its slot for reuse."""
        g = self.slot_of(vid)
        self.state.loc[vid] = -1
        self.slot_owner[g] = -1
        self.free_queue.append(g)
        self.state.header[LIVE] -= 1
        return g

    def allocate_slot(self, file: PageFile | None = None) -> tuple[int, int]:
        """Pop the oldest recycled slot, or append one (growing the file by a page if needed).

        ``file`` is the page file to grow; it defaults to the query index.
        """
        file = file or self.index_file
        if self.free_queue:
            g = self.free_queue.popleft()
        else:
            g = self.tail
            self.state.header[TAIL] = g + 1
            page = g // self.layout.nodes_per_page
            if page >= file.num_pages:
                file.extend_to(page + 1)
                blank = self.layout.empty_pages(1).view(np.uint8).reshape(1, -1)
                file.write(np.array([page]), blank)
        return self.layout.locate(g)

    # -------------------------------------------------------------- page I/O

    def buffer(self) -> PageBuffer:
        return PageBuffer(self.index_file, self.layout)

    def read_pages(self, page_ids: Iterable[int]) -> dict[int, bytes]:
        ids, buf = self.index_file.read(list(page_ids))
        return {p: buf[i].tobytes() for i, p in enumerate(ids.tolist())}

    def write_pages(self, pages: dict[int, bytes]) -> None:
        if not pages:
            return
        ids = sorted(int(p) for p in pages)
        if ids[0] < 0 or ids[-1] >= self.num_pages:
            raise UsageError("page id out of bounds")
        rows = []
        for p in ids:
            payload = pages[p]
            if len(payload) != self.layout.page_size:
                raise UsageError(f"page {p}: payload is {len(payload)} bytes, expected {self.layout.page_size}")
            rows.append(np.frombuffer(payload, np.uint8))
        self.index_file.write(np.array(ids, np.int64), np.stack(rows))

    def swap_index_file(self, new_path: Path) -> None:
        """Atomically replace ``index.dat`` with a fully written file."""
        self._mm = None
        self.index_file.close()
        os.replace(new_path, self.path / INDEX_FILE)
        self.index_file = PageFile(self.path / INDEX_FILE, self.layout.page_size, self.ledger, durable=self.durable)

    # -------------------------------------------------------------- topology

    def _topology_rows(self, counted: bool = True) -> np.ndarray:
        fd = self.topo_file.fd
        size = os.fstat(fd).st_size
        trec = self.layout.topo_record_size
        if size % trec:
            raise StorageError("topology file size is not a whole number of rows")
        buf = np.empty(size, np.uint8)
        try:
            got = os.preadv(fd, [buf], 0) if size else 0
        except OSError as exc:
            raise StorageError(f"cannot read topology: {exc}") from exc
        if got != size:
            raise StorageError("short read on topology file")
        if counted:
            self.ledger.add(topology_read_bytes=size)
        return buf.view(self.layout.topo_dtype())

    def scan_topology(self, deleted: Iterable[int]) -> dict[int, set[int]]:
        """Map every surviving vertex with a neighbor in ``deleted`` to those neighbors.

        Reads only the topology file, in full and sequentially.
        """
        dels = np.unique(np.fromiter((int(v) for v in deleted), np.int64))
        if dels.size == 0:
            return {}
        image = self._topology_rows()
        self._topo_image = (self.generation, image)
        rows = image[: self.tail]
        cap = max(self.state.capacity, int(dels.max()) + 1)
        mask = np.zeros(cap + 1, bool)
        mask[dels] = True
        owner = rows["owner"].astype(np.int64)
        nbr = np.minimum(rows["nbr"], cap)
        colvalid = np.arange(self.r_prime)[None, :] < rows["deg"][:, None]
        hit = mask[nbr] & colvalid
        rowhit = hit.any(axis=1) & (owner != int(FREE)) & ~mask[np.minimum(owner, cap)]
        out: dict[int, set[int]] = {}
        for r in np.flatnonzero(rowhit).tolist():
            out[int(owner[r])] = set(nbr[r][hit[r]].tolist())
        return out

    def sync_topology(self, dirty: Iterable[int], source: PageBuffer | None = None, freed: Iterable[int] = ()) -> int:
        """Rewrite topology rows of ``dirty`` vertices (and blank ``freed`` slots).

        Records come from ``source`` when it holds their page, else from the
        query index. Returns the number of topology pages touched.
        """
        image = self._take_image()
        freed_slots = np.fromiter((int(g) for g in freed), np.int64)
        vids = np.fromiter((int(v) for v in dirty), np.int64)
        vids = vids[(vids >= 0) & (vids < self.state.capacity)]
        locs = self.state.loc[vids]
        vids, locs = vids[locs >= 0], locs[locs >= 0]
        # a freed slot reused in the same batch belongs to its new owner
        all_slots = np.concatenate((freed_slots, locs))
        all_owners = np.concatenate((np.full(freed_slots.size, -1, np.int64), vids))
        if all_slots.size == 0:
            return 0
        rev_slots = all_slots[::-1]
        slots, first = np.unique(rev_slots, return_index=True)
        owners = all_owners[::-1][first]
        rows = np.zeros(slots.size, self.layout.topo_dtype())
        rows["owner"] = FREE
        rows["nbr"] = FREE
        rows["epoch"] = self.generation
        npp = self.layout.nodes_per_page
        live = np.flatnonzero(owners >= 0)
        if live.size:
            page_of, slot_in = np.divmod(slots[live], npp)
            pages = np.unique(page_of)
            have = source.raw if source is not None else {}
            fallback = PageBuffer(self.index_file, self.layout)
            fallback.fetch(p for p in pages.tolist() if p not in have)
            raw = np.stack([have[p] if p in have else fallback.raw[p] for p in pages.tolist()])
            stacked = raw.view(self.layout.page_dtype()).reshape(-1)["rec"]
            at = np.searchsorted(pages, page_of)
            rows["owner"][live] = owners[live]
            rows["deg"][live] = stacked["deg"][at, slot_in]
            rows["nbr"][live] = stacked["nbr"][at, slot_in]
        trec = self.layout.topo_record_size
        ps = self.layout.page_size
        touched = np.unique(np.concatenate((slots * trec // ps, ((slots + 1) * trec - 1) // ps)))
        if image is not None:
            # patch the scanned image and write whole touched pages
            if slots[-1] >= image.size:
                grown = np.zeros(int(slots[-1]) + 1, image.dtype)
                grown[: image.size] = image
                grown["owner"][image.size :] = FREE
                grown["nbr"][image.size :] = FREE
                image = grown
            image[slots] = rows
            flat = image.view(np.uint8)
            for _, first_page, length in runs(touched):
                start = first_page * ps
                self.topo_file.write_bytes_at(start, flat[start : min((first_page + length) * ps, flat.size)])
        else:
            for at, first_slot, length in runs(slots):
                self.topo_file.write_bytes_at(first_slot * trec, rows[at : at + length].tobytes())
        self.topo_file.sync()
        self.ledger.add(topology_write_bytes=int(touched.size) * ps, topology_write_pages=int(touched.size))
        return int(touched.size)

    def _take_image(self) -> np.ndarray | None:
        """The topology rows scanned earlier in this batch, if any (consumed once)."""
        cached, self._topo_image = self._topo_image, None
        if cached is None or cached[0] != self.generation:
            return None
        return cached[1]

    def rebuild_topology(self) -> None:
        """Regenerate the whole topology file from the query index (uncounted)."""
        self._topo_image = None
        with self.ledger.uncounted():
            recs = self._records()
            rows = np.zeros(self.tail, self.layout.topo_dtype())
            rows["owner"] = FREE
            rows["nbr"] = FREE
            rows["epoch"] = self.generation
            owners = self.slot_owner[: self.tail]
            live = np.flatnonzero(owners >= 0)
            rows["owner"][live] = owners[live]
            rows["deg"][live] = recs["deg"][live]
            rows["nbr"][live] = recs["nbr"][live]
            os.ftruncate(self.topo_file.fd, 0)
            self.topo_file.write_bytes_at(0, rows.tobytes())
            self.topo_file.sync()

    # ------------------------------------------------------------- search

    def _words(self) -> np.ndarray:
        size = self.index_file.size
        ino = os.fstat(self.index_file.fd).st_ino
        if self._mm is None or self._mm[0] != (size, ino):
            mm = np.memmap(self.index_file.path, dtype=np.uint32, mode="r")
            self._mm = ((size, ino), mm.view(np.ndarray))
        return self._mm[1]

    def view(self, words: np.ndarray | None = None) -> GraphView:
        lay = self.layout
        if words is None:
            words = self._words()
        return GraphView(words, self.state.loc, lay.nodes_per_page, lay.page_words, lay.rec_words, lay.dim, self.entry)

    def search(self, q, params: SearchParams, tombstones=None, *, page_seen: np.ndarray | None = None, phase: str = "query") -> SearchResult:
        """Beam search over the memory-mapped query index.

        Every page whose record is touched is charged as one page read (once
        per ``page_seen`` scope).
        """
        if self.live_count == 0:
            raise UsageError("index is empty")
        tomb = self.state.tomb if tombstones is None else tombstones
        res = search_view(self.view(), q, params, tomb, page_seen)
        with self.ledger.charge(phase):
            self.ledger.add(read_pages=res.pages, read_bytes=res.pages * self.layout.page_size)
        return res

    # ------------------------------------------------------- whole-file reads

    def _records(self) -> np.ndarray:
        """All records in global-slot order (uncounted memory-mapped view)."""
        words = self._words()
        pages = words.view(np.uint8).view(self.layout.page_dtype())
        return pages["rec"].reshape(-1)

    def adjacency(self) -> dict[int, list[int]]:
        recs = self._records()
        out = {}
        for vid in self.live_ids().tolist():
            g = int(self.state.loc[vid])
            out[vid] = recs["nbr"][g][: recs["deg"][g]].astype(np.int64).tolist()
        return out

    def peek(self, vid: int) -> tuple[np.ndarray, list[int]]:
        """Vector and neighbor list of a live vertex, without I/O accounting."""
        g = self.slot_of(vid)
        recs = self._records()
        return recs["vec"][g].copy(), recs["nbr"][g][: recs["deg"][g]].astype(np.int64).tolist()

    def vectors(self, ids: Iterable[int], words: np.ndarray | None = None) -> np.ndarray:
        """Vectors of live ids read through a memory map (uncounted).

        Callers use this only for records whose pages a search has already
        charged.
        """
        words = self._words() if words is None else words
        lay = self.layout
        slots = np.array([self.slot_of(int(v)) for v in ids], np.int64)
        if slots.size == 0:
            return np.empty((0, lay.dim), np.float32)
        pages, within = np.divmod(slots, lay.nodes_per_page)
        base = pages * lay.page_words + within * lay.rec_words
        fw = words.view(np.float32)
        return fw[base[:, None] + np.arange(lay.dim)[None, :]]

    def live_dataset(self) -> VectorDataset:
        ids = self.live_ids()
        recs = self._records()
        return VectorDataset(recs["vec"][self.state.loc[ids]], ids.astype(np.uint32))

    # --------------------------------------------------------------- audit

    def audit(self) -> AuditReport:
        """Check every structural invariant against the files on disk."""
        rep = AuditReport()
        bad = rep.violations
        with self.ledger.uncounted():
            loc = self.state.loc
            live_ids = np.flatnonzero(loc >= 0)
            slots = loc[live_ids]
            fq = np.array(list(self.free_queue), np.int64)
            tail = self.tail
            rep.live, rep.allocated, rep.free = int(live_ids.size), tail, int(fq.size)
            if live_ids.size != self.live_count:
                bad.append(f"live count {self.live_count} but {live_ids.size} ids are mapped")
            if np.unique(slots).size != slots.size:
                bad.append("two live vertices share a slot")
            if np.unique(fq).size != fq.size:
                bad.append("free queue holds a slot twice")
            both = np.intersect1d(slots, fq)
            if both.size:
                bad.append(f"{both.size} slots are both live and free (e.g. {int(both[0])})")
            covered = np.union1d(slots, fq)
            if covered.size != tail or (tail and (covered[0] != 0 or covered[-1] != tail - 1)):
                bad.append(f"live and free slots cover {covered.size} of {tail} allocated slots")
            if slots.size and int(slots.max()) >= tail:
                bad.append("a live vertex sits beyond the allocated range")
            if slots.size and np.any(self.slot_owner[slots] != live_ids):
                bad.append("reverse location map disagrees with the forward map")
            if fq.size and np.any(self.slot_owner[fq[fq < self.slot_owner.size]] >= 0):
                bad.append("a free slot still has an owner")
            if self.live_count and not self.is_live(self.entry):
                bad.append(f"entry vertex {self.entry} is not live")
            if self.index_file.num_pages * self.layout.nodes_per_page < tail:
                bad.append("index file is shorter than the allocated slot range")
                return rep

            recs = self._records()
            deg = recs["deg"][slots].astype(np.int64)
            nbr = recs["nbr"][slots].astype(np.int64)
            over = np.flatnonzero(deg > self.r_prime)
            if over.size:
                bad.append(f"{over.size} records exceed capacity {self.r_prime} (e.g. vertex {int(live_ids[over[0]])})")
            deg = np.minimum(deg, self.r_prime)
            colvalid = np.arange(self.r_prime)[None, :] < deg[:, None]
            if np.any((nbr == live_ids[:, None]) & colvalid):
                bad.append("self-loop present")
            cap = loc.size
            safe = np.where(colvalid, np.minimum(nbr, cap), 0)
            dangling = colvalid & ((nbr >= cap) | (loc[np.minimum(safe, cap - 1)] < 0))
            if dangling.any():
                r = int(np.flatnonzero(dangling.any(axis=1))[0])
                bad.append(f"{int(dangling.sum())} neighbor ids are not live (e.g. in vertex {int(live_ids[r])})")
            srt = np.sort(np.where(colvalid, nbr, -1 - np.arange(self.r_prime)[None, :]), axis=1)
            if np.any((np.diff(srt, axis=1) == 0) & (srt[:, 1:] >= 0)):
                bad.append("duplicate neighbor within one list")

            rows = self._topology_rows(counted=False)
            if rows.shape[0] < tail:
                bad.append("topology file is shorter than the allocated slot range")
                return rep
            t = rows[slots]
            if np.any(t["owner"].astype(np.int64) != live_ids):
                bad.append("topology owner ids disagree with the location map")
            if np.any(t["deg"].astype(np.int64) != recs["deg"][slots].astype(np.int64)):
                bad.append("topology degrees disagree with the query index")
            elif np.any((t["nbr"].astype(np.int64) != nbr) & colvalid):
                bad.append("topology neighbor lists disagree with the query index")
            if fq.size and np.any(rows["owner"][fq] != FREE):
                bad.append("topology still names an owner for a free slot")
        return rep

    def topology_matches(self) -> bool:
        """Full-file comparison of topology rows with query-index adjacency."""
        rep = self.audit()
        return not any("topology" in v for v in rep.violations)


def _write_meta(path: Path, meta: dict) -> None:
    tmp = path / (META_FILE + ".tmp")
    tmp.write_text(json.dumps(meta))
    os.replace(tmp, path / META_FILE)
