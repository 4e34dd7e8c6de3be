"""In-memory proximity graph: construction, alpha-pruning and beam search.

The same search kernel walks this graph and the on-disk index, which makes
the in-memory graph a convenient oracle for the disk engines.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import VectorDataset, order_by_distance
from .errors import UsageError

FREE = _kernels.FREE


@dataclass(frozen=True)
class BuildParams:
    R: int = 32
    L_build: int = 75
    alpha: float = 1.2
    max_c: int = 500
    W: int = 4

    def __post_init__(self) -> None:
        if self.R < 2:
            raise UsageError("R must be at least 2")
        if self.L_build < self.R:
            raise UsageError("L_build must be at least R")
        if self.alpha < 1.0:
            raise UsageError("alpha must be at least 1")
        if self.max_c < self.R:
            raise UsageError("max_c must be at least R")
        if self.W < 1:
            raise UsageError("W must be at least 1")


@dataclass(frozen=True)
class SearchParams:
    L_search: int = 120
    W: int = 4
    k: int = 10

    def __post_init__(self) -> None:
        if self.k < 1 or self.k > self.L_search:
            raise UsageError("need 1 <= k <= L_search")
        if self.W < 1:
            raise UsageError("W must be at least 1")


@dataclass
class GraphView:
    """Flat record words plus addressing, as consumed by the search kernel."""

    words: np.ndarray  # uint32, one record layout per slot
    loc: np.ndarray
    npp: int
    page_words: int
    rec_words: int
    dim: int
    entry: int

    @property
    def num_pages(self) -> int:
        return self.words.size // self.page_words


@dataclass
class SearchResult:
    ids: list[int]
    dists: list[float]
    visited: np.ndarray  # expanded ids in expansion order
    pages: int = 0


@dataclass
class MemGraph:
    """Adjacency over vertex ids ``0..n-1`` with a fixed-width neighbor table."""

    vectors: np.ndarray
    adjacency: np.ndarray
    degree: np.ndarray
    R: int
    entry: int

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    def neighbors(self, v: int) -> list[int]:
        return self.adjacency[v, : self.degree[v]].astype(np.int64).tolist()

    def adjacency_lists(self) -> list[list[int]]:
        return [self.neighbors(v) for v in range(self.n)]

    def packed(self) -> np.ndarray:
        n, d = self.vectors.shape
        words = np.empty((n, d + 1 + self.adjacency.shape[1]), np.uint32)
        words[:, :d] = self.vectors.view(np.uint32)
        words[:, d] = self.degree
        words[:, d + 1 :] = self.adjacency
        return words

    def view(self) -> GraphView:
        words = self.packed()
        n, rec = words.shape
        return GraphView(words.reshape(-1), np.arange(n, dtype=np.int64), 1, rec, rec, self.vectors.shape[1], self.entry)

    @classmethod
    def from_lists(cls, vectors: np.ndarray, lists: list[list[int]], R: int, entry: int = 0, cap: int | None = None) -> MemGraph:
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        cap = cap or max([R] + [len(a) for a in lists])
        adj = np.full((len(lists), cap), FREE, np.uint32)
        deg = np.zeros(len(lists), np.uint32)
        for v, a in enumerate(lists):
            adj[v, : len(a)] = a
            deg[v] = len(a)
        return cls(vectors, adj, deg, R, entry)


def robust_prune(p_vec, cand_ids, cand_vecs, alpha: float, R: int, max_c: int = 500) -> list[int]:
    """Keep at most ``R`` diverse candidates around ``p_vec``.

    Candidates are visited in (distance, id) order, truncated to the
    ``max_c`` nearest. Each kept candidate ``u`` discards every later ``v``
    with ``alpha * d(u, v) <= d(p, v)``.
    """
    ids = np.asarray(cand_ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        return []
    if np.unique(ids).size != ids.size:
        raise UsageError("candidate ids must be unique")
    vecs = np.ascontiguousarray(cand_vecs, dtype=np.float32)
    p_vec = np.ascontiguousarray(p_vec, dtype=np.float32).reshape(-1)
    if vecs.shape != (ids.size, p_vec.size):
        raise UsageError("candidate vectors must align with candidate ids")
    return _kernels.robust_prune(p_vec, ids, vecs, float(alpha), int(R), int(max_c)).tolist()


def prune_vertex(graph: MemGraph, p: int, candidates: Iterable[int], alpha: float, R: int, max_c: int = 500) -> list[int]:
    """Graph-level prune: resolves vectors by id and rejects unknown ids."""
    cand = np.fromiter((int(c) for c in candidates), np.int64)
    if not 0 <= p < graph.n or (cand.size and (cand.min() < 0 or cand.max() >= graph.n)):
        raise UsageError("unknown vertex id")
    cand = np.unique(cand)
    if np.any(cand == p):
        raise UsageError("the pruned vertex cannot be its own candidate")
    return robust_prune(graph.vectors[p], cand, graph.vectors[cand], alpha, R, max_c)


def _tomb_mask(tombstones, n_ids: int) -> np.ndarray | None:
    if tombstones is None:
        return None
    if isinstance(tombstones, np.ndarray) and tombstones.dtype == np.uint8:
        return tombstones
    ids = np.fromiter((int(t) for t in tombstones), np.int64)
    if ids.size == 0:
        return None
    mask = np.zeros(max(n_ids, int(ids.max()) + 1), np.uint8)
    mask[ids] = 1
    return mask


def search_view(view: GraphView, q, params: SearchParams, tombstones=None, page_seen: np.ndarray | None = None) -> SearchResult:
    q = np.ascontiguousarray(q, dtype=np.float32).reshape(-1)
    if q.size != view.dim:
        raise UsageError(f"dimension mismatch: query has {q.size}, index has {view.dim}")
    if view.entry < 0 or view.entry >= view.loc.size or view.loc[view.entry] < 0:
        raise UsageError("index is empty")
    if page_seen is None:
        page_seen = np.zeros(view.num_pages, np.uint8)
    exp_i, exp_d, _, _, pages = _kernels.beam_search(
        q,
        view.words.view(np.float32),
        view.words,
        view.loc,
        view.npp,
        view.page_words,
        view.rec_words,
        view.dim,
        view.entry,
        params.L_search,
        params.W,
        page_seen,
    )
    mask = _tomb_mask(tombstones, view.loc.size)
    keep = exp_i
    keep_d = exp_d
    if mask is not None:
        live = np.ones(exp_i.size, bool)
        inside = exp_i < mask.size
        live[inside] = mask[exp_i[inside]] == 0
        keep, keep_d = exp_i[live], exp_d[live]
    order = order_by_distance(keep_d, keep)[: params.k]
    return SearchResult(keep[order].tolist(), keep_d[order].tolist(), exp_i, int(pages))


def beam_search(graph, q, params: SearchParams, tombstones=None) -> SearchResult:
    """Search a ``MemGraph`` (or anything exposing ``view()``).

    ``ids`` are the ``k`` closest expanded vertices that are not tombstoned;
    ``visited`` is the full expansion sequence.
    """
    if getattr(graph, "n", 1) == 0:
        raise UsageError("index is empty")
    return search_view(graph.view(), q, params, tombstones)


def medoid(vectors: np.ndarray) -> int:
    """Index of the vector minimizing the summed squared distance to all others.

    For squared Euclidean distance that sum equals ``n * d(x_i, mean) + const``,
    so the row nearest the centroid is the exact answer.
    """
    centroid = vectors.astype(np.float64).mean(axis=0).astype(np.float32)
    dist = _kernels.sqdist_many(centroid, np.ascontiguousarray(vectors, dtype=np.float32))
    return int(order_by_distance(dist, np.arange(dist.size))[0])


def build_index(dataset: VectorDataset, params: BuildParams | None = None, seed: int = 0) -> MemGraph:
    """Single-pass incremental build over a seeded random insertion order.

    Vertex ids are dataset row indices.
    """
    params = params or BuildParams()
    if dataset.count == 0:
        raise UsageError("cannot build an index over an empty dataset")
    vectors = np.ascontiguousarray(dataset.data)
    n = vectors.shape[0]
    entry = medoid(vectors)
    order = np.random.default_rng(seed).permutation(n).astype(np.int64)
    words = _kernels.build_graph(vectors, order, entry, params.R, params.L_build, params.W, float(params.alpha), params.max_c)
    d = vectors.shape[1]
    return MemGraph(vectors, words[:, d + 1 :].copy(), words[:, d].copy(), params.R, entry)
