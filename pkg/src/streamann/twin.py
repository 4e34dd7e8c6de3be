"""Dictionary-backed replicas of both update engines.

A twin holds vectors and neighbor lists in plain dicts: no pages, slots,
free queue, pending-edge cache or topology file. It applies the same
repair, search and pruning rules, so after any batch sequence its adjacency
must equal what the disk engine left on disk. Any difference points at the
storage machinery rather than the graph algorithms.
"""

from __future__ import annotations

import numpy as np

from .core import distances, order_by_distance
from .diskindex import DiskIndex
from .memgraph import GraphView, SearchParams, search_view
from .updates import BatchSpec, NeighborRanker, UpdateParams, _prune, asnr_repair

FREE = np.uint32(0xFFFFFFFF)


class GraphTwin:
    def __init__(self, vectors: dict[int, np.ndarray], lists: dict[int, list[int]], entry: int, cap: int) -> None:
        self.vecs = {int(k): np.ascontiguousarray(v, np.float32) for k, v in vectors.items()}
        self.lists = {int(k): [int(u) for u in a] for k, a in lists.items()}
        self.entry = int(entry)
        self.cap = int(cap)

    @classmethod
    def from_index(cls, index: DiskIndex) -> GraphTwin:
        vecs, lists = {}, {}
        for v in index.live_ids().tolist():
            vecs[v], lists[v] = index.peek(v)
        return cls(vecs, lists, index.entry, index.r_prime)

    def adjacency(self) -> dict[int, list[int]]:
        return {v: list(a) for v, a in self.lists.items()}

    # -- shared steps ----------------------------------------------------------

    def _view(self) -> GraphView:
        ids = sorted(self.lists)
        d = next(iter(self.vecs.values())).size
        rec = d + 1 + self.cap
        words = np.full((len(ids), rec), FREE, np.uint32)
        loc = np.full(max(ids) + 1, -1, np.int64)
        for row, v in enumerate(ids):
            words[row, :d] = self.vecs[v].view(np.uint32)
            words[row, d] = len(self.lists[v])
            words[row, d + 1 : d + 1 + len(self.lists[v])] = self.lists[v]
            loc[v] = row
        return GraphView(words.reshape(-1), loc, 1, rec, rec, d, self.entry)

    def _delete(self, ids: list[int]) -> tuple[set[int], dict[int, np.ndarray], dict[int, list[int]]]:
        gone = set(ids)
        tvecs = {v: self.vecs[v] for v in ids}
        tnbrs = {v: self.lists[v] for v in ids}
        if self.entry in gone:
            cands = [u for u in tnbrs[self.entry] if u not in gone and u in self.lists]
            if cands:
                cid = np.asarray(cands, np.int64)
                dist = distances(tvecs[self.entry], np.stack([self.vecs[u] for u in cands]))
                self.entry = int(cid[order_by_distance(dist, cid)[0]])
            else:
                survivors = sorted(set(self.lists) - gone)
                if survivors:
                    self.entry = survivors[0]
        for v in ids:
            del self.vecs[v], self.lists[v]
        return gone, tvecs, tnbrs

    def _insert(self, vid: int, x: np.ndarray, params) -> list[int]:
        x = np.ascontiguousarray(x, np.float32)
        nout: list[int] = []
        if self.lists:
            sp = SearchParams(L_search=params.L_build, W=params.W, k=1)
            res = search_view(self._view(), x, sp)
            visited = [int(v) for v in res.visited.tolist() if int(v) in self.lists]
            if visited:
                vecs = np.stack([self.vecs[u] for u in visited])
                nout = _prune(x, visited, vecs, params.alpha, params.R, params.max_c)
        self.vecs[vid] = x
        self.lists[vid] = nout
        if len(self.lists) == 1:
            self.entry = vid
        return nout

    def _inserts(self, spec: BatchSpec, params) -> dict[int, set[int]]:
        pending: dict[int, set[int]] = {}
        for vid, x in spec.inserts:
            for u in self._insert(int(vid), x, params):
                pending.setdefault(u, set()).add(int(vid))
        return pending

    def _merge(self, pending: dict[int, set[int]], limit: int, params) -> None:
        for u in sorted(pending):
            cur = self.lists[u]
            present = set(cur)
            merged = cur + [t for t in sorted(pending[u]) if t not in present]
            if len(merged) > limit:
                vecs = np.stack([self.vecs[w] for w in merged])
                merged = _prune(self.vecs[u], merged, vecs, params.alpha, params.R, params.max_c)
            self.lists[u] = merged


class LocalizedTwin(GraphTwin):
    def run_batch(self, spec: BatchSpec, params: UpdateParams) -> None:
        ids = spec.deletes.tolist()
        if ids:
            gone, tvecs, tnbrs = self._delete(ids)
            vec_of = lambda v: tvecs[v] if v in tvecs else self.vecs[v]
            list_of = lambda v: tnbrs[v] if v in tnbrs else self.lists[v]
            ranker = NeighborRanker(vec_of, lambda v: [u for u in tnbrs[v] if u not in gone])
            affected = {p: {u for u in a if u in gone} for p, a in self.lists.items()}
            for p in sorted(v for v, D in affected.items() if D):
                D = affected[p]
                C = [u for u in self.lists[p] if u not in D]
                self.lists[p], _ = asnr_repair(p, D, C, params, vec_of, list_of, gone, ranker)
        self._merge(self._inserts(spec, params), params.r_prime, params)


class BaselineTwin(GraphTwin):
    def run_batch(self, spec: BatchSpec, params) -> None:
        ids = spec.deletes.tolist()
        if ids:
            gone, _, tnbrs = self._delete(ids)
            for p in sorted(self.lists):
                cur = self.lists[p]
                lost = sorted(u for u in cur if u in gone)
                if not lost:
                    continue
                cand = [u for u in cur if u not in gone]
                have = set(cand)
                for d in lost:
                    for u in tnbrs[d]:
                        if u not in gone and u != p and u not in have:
                            cand.append(u)
                            have.add(u)
                if cand:
                    vecs = np.stack([self.vecs[u] for u in cand])
                    self.lists[p] = _prune(self.vecs[p], cand, vecs, params.alpha, params.R, params.max_c)
                else:
                    self.lists[p] = []
        self._merge(self._inserts(spec, params), params.R, params)
