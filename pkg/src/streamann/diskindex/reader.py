"""Read-only searcher for use from another process while a writer updates.

The reader opens its own descriptor on ``index.dat`` and takes a shared
page lock around every page read, so it never observes a page halfway
through a write. It finds vertices through the writer's shared location
state (see ``IndexState.share``).

Traversal order, tie-breaking and distance arithmetic match the compiled
search kernel, so on a quiescent index both return identical results.
"""

from __future__ import annotations

import bisect
import json
import os
from pathlib import Path

import numpy as np

from .. import _kernels
from ..errors import FormatError, UsageError
from ..memgraph import SearchParams, SearchResult
from .index import INDEX_FILE, META_FILE
from .layout import FORMAT_VERSION, PageLayout
from .pageio import lock_range, unlock_range
from .state import IndexState


class IndexReader:
    def __init__(self, path: str | os.PathLike, shm_name: str, *, lock: bool = True) -> None:
        self.path = Path(path)
        meta = json.loads((self.path / META_FILE).read_text())
        if meta.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {meta.get('format_version')}")
        self.layout = PageLayout(meta["dim"], meta["r_prime"], meta["page_size"])
        self.state = IndexState.attach(shm_name)
        self.lock = lock
        self.fd = -1
        self._ino = None
        self._reopen()

    def _reopen(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
        self.fd = os.open(self.path / INDEX_FILE, os.O_RDONLY)
        self._ino = os.fstat(self.fd).st_ino

    def _check_file(self) -> None:
        # a full-file rewrite renames a new file into place
        if os.stat(self.path / INDEX_FILE).st_ino != self._ino:
            self._reopen()

    def _read_page(self, page: int) -> np.ndarray:
        ps = self.layout.page_size
        if self.lock:
            lock_range(self.fd, page * ps, ps, False)
        try:
            raw = os.pread(self.fd, ps, page * ps)
        finally:
            if self.lock:
                unlock_range(self.fd, page * ps, ps)
        if len(raw) != ps:
            raw = raw.ljust(ps, b"\0")
        return np.frombuffer(raw, self.layout.page_dtype())["rec"][0]

    def search(self, q, params: SearchParams) -> SearchResult:
        lay = self.layout
        q = np.ascontiguousarray(q, dtype=np.float32).reshape(-1)
        if q.size != lay.dim:
            raise UsageError(f"dimension mismatch: query has {q.size}, index has {lay.dim}")
        self._check_file()
        loc = self.state.loc
        entry = self.state.entry
        if entry < 0 or entry >= loc.size or loc[entry] < 0:
            raise UsageError("index is empty")
        npp = lay.nodes_per_page
        pages: dict[int, np.ndarray] = {}

        def record(vid: int):
            g = int(loc[vid])
            if g < 0:
                return None
            page, slot = divmod(g, npp)
            recs = pages.get(page)
            if recs is None:
                recs = pages[page] = self._read_page(page)
            return recs[slot]

        n_ids = loc.size
        seen = {entry}
        rec = record(entry)
        if rec is None:
            raise UsageError("index is empty")
        # candidate list kept sorted by (dist, id); expanded flags alongside
        cand: list[tuple[float, int]] = [(_kernels.sqdist(q, np.ascontiguousarray(rec["vec"])), entry)]
        expanded: list[bool] = [False]
        L, W = params.L_search, params.W
        exp_i: list[int] = []
        exp_d: list[float] = []
        while True:
            sel = []
            for i in range(len(cand)):
                if not expanded[i]:
                    expanded[i] = True
                    sel.append(cand[i])
                    if len(sel) == W:
                        break
            if not sel:
                break
            for du, u in sel:
                exp_i.append(u)
                exp_d.append(du)
                ru = record(u)
                if ru is None:
                    continue
                deg = min(int(ru["deg"]), lay.r_prime)
                for v in ru["nbr"][:deg].tolist():
                    if v >= n_ids or v in seen:
                        continue
                    seen.add(v)
                    rv = record(v)
                    if rv is None:
                        continue
                    dv = _kernels.sqdist(q, np.ascontiguousarray(rv["vec"]))
                    key = (dv, v)
                    if len(cand) == L and not key < cand[-1]:
                        continue
                    pos = bisect.bisect_left(cand, key)
                    cand.insert(pos, key)
                    expanded.insert(pos, False)
                    if len(cand) > L:
                        cand.pop()
                        expanded.pop()
        tomb = self.state.tomb
        live = [(d, i) for d, i in zip(exp_d, exp_i) if not (i < tomb.size and tomb[i])]
        live.sort()
        top = live[: params.k]
        return SearchResult([i for _, i in top], [d for d, _ in top], np.asarray(exp_i, np.int64), len(pages))

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1
        if self.state is not None and self.state.shm is not None:
            self.state.release()
        self.state = None

    def __enter__(self) -> IndexReader:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
