"""Compiled inner loops.

Every distance goes through ``sqdist`` and every vector handed to it is a
C-contiguous 1-d slice, so the build, the disk engines and the in-memory
twins all run the same machine code and agree bitwise (and therefore break
ties identically).

Graphs are walked as flat 32-bit word buffers in the on-disk record layout
``[vector: d x f32][degree: u32][neighbors: cap x u32]``. Records sit
``npp`` to a page of ``page_words`` words; an in-memory graph is the case
``npp == 1`` with ``page_words == rec_words``. ``fw`` and ``uw`` are float32
and uint32 views of one buffer. ``loc[id]`` is the global slot
``page * npp + slot`` or -1 when the id is not resident.
"""

from __future__ import annotations

import numpy as np
from numba import njit

FREE = np.uint32(0xFFFFFFFF)


@njit(cache=True, nogil=True, fastmath=True)
def sqdist(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        t = np.float64(a[i]) - np.float64(b[i])
        s += t * t
    return s


@njit(cache=True, nogil=True)
def sqdist_many(q, mat):
    out = np.empty(mat.shape[0], np.float64)
    for i in range(mat.shape[0]):
        out[i] = sqdist(q, mat[i])
    return out


@njit(cache=True, nogil=True)
def argsort_dist_id(dist, ids):
    """Indices ordering (dist, id) ascending."""
    by_id = np.argsort(ids, kind="mergesort")
    return by_id[np.argsort(dist[by_id], kind="mergesort")]


@njit(inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True, nogil=True)
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n), a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(inline="always")
def _base(g, npp, page_words, rec_words):
    return (g // npp) * page_words + (g % npp) * rec_words


@njit(cache=True, nogil=True)
def beam_search(q, fw, uw, loc, npp, page_words, rec_words, d, entry, L, W, page_seen):
    """Best-first search bounded by ``L`` candidates, expanding ``W`` per round.

    Returns ``(exp_ids, exp_dist, cand_ids, cand_dist, new_pages)``: expanded
    vertices in expansion order and the final candidate list sorted by
    (distance, id). ``page_seen`` may be shared across calls; only pages
    not yet marked in it are counted in ``new_pages``.
    """
    n_ids = loc.shape[0]
    seen = np.zeros(n_ids, np.uint8)
    pages = 0

    cd = np.empty(L + 1, np.float64)
    ci = np.empty(L + 1, np.int64)
    ce = np.zeros(L + 1, np.bool_)
    exp_i = np.empty(64, np.int64)
    exp_d = np.empty(64, np.float64)
    n_exp = 0
    sel_i = np.empty(W, np.int64)
    sel_d = np.empty(W, np.float64)

    g = loc[entry]
    pg = g // npp
    if page_seen[pg] == 0:
        page_seen[pg] = 1
        pages += 1
    seen[entry] = 1
    b = _base(g, npp, page_words, rec_words)
    cd[0] = sqdist(q, fw[b : b + d])
    ci[0] = entry
    ce[0] = False
    size = 1

    while True:
        nsel = 0
        for i in range(size):
            if not ce[i]:
                ce[i] = True
                sel_i[nsel] = ci[i]
                sel_d[nsel] = cd[i]
                nsel += 1
                if nsel == W:
                    break
        if nsel == 0:
            break
        for s in range(nsel):
            u = sel_i[s]
            if n_exp == exp_i.shape[0]:
                exp_i = _grow(exp_i, n_exp + 1)
                exp_d = _grow(exp_d, n_exp + 1)
            exp_i[n_exp] = u
            exp_d[n_exp] = sel_d[s]
            n_exp += 1
            gu = loc[u]
            if gu < 0:
                continue
            bu = _base(gu, npp, page_words, rec_words)
            du = uw[bu + d]
            for j in range(du):
                v = np.int64(uw[bu + d + 1 + j])
                if v >= n_ids or seen[v]:
                    continue
                seen[v] = 1
                gv = loc[v]
                if gv < 0:
                    continue
                pv = gv // npp
                if page_seen[pv] == 0:
                    page_seen[pv] = 1
                    pages += 1
                bv = _base(gv, npp, page_words, rec_words)
                dv = sqdist(q, fw[bv : bv + d])
                if size == L and not _less(dv, v, cd[size - 1], ci[size - 1]):
                    continue
                k = size if size < L else L - 1
                while k > 0 and _less(dv, v, cd[k - 1], ci[k - 1]):
                    cd[k] = cd[k - 1]
                    ci[k] = ci[k - 1]
                    ce[k] = ce[k - 1]
                    k -= 1
                cd[k] = dv
                ci[k] = v
                ce[k] = False
                if size < L:
                    size += 1
    return exp_i[:n_exp].copy(), exp_d[:n_exp].copy(), ci[:size].copy(), cd[:size].copy(), pages


@njit(cache=True, nogil=True)
def robust_prune(pvec, cand_ids, cand_vecs, alpha, R, max_c):
    """Alpha-pruning. ``cand_ids`` must be unique and exclude the owner."""
    n = cand_ids.shape[0]
    out = np.empty(min(R, n), np.int64)
    if n == 0:
        return out
    dp = sqdist_many(pvec, cand_vecs)
    order = argsort_dist_id(dp, cand_ids)
    m = min(n, max_c)
    removed = np.zeros(m, np.bool_)
    cnt = 0
    for a in range(m):
        if removed[a]:
            continue
        i = order[a]
        out[cnt] = cand_ids[i]
        cnt += 1
        if cnt == R:
            break
        for b in range(a + 1, m):
            if removed[b]:
                continue
            j = order[b]
            if alpha * sqdist(cand_vecs[i], cand_vecs[j]) <= dp[j]:
                removed[b] = True
    return out[:cnt]


@njit(cache=True, nogil=True)
def _gather(fw, ids, rec_words, d):
    out = np.empty((ids.shape[0], d), np.float32)
    for i in range(ids.shape[0]):
        b = ids[i] * rec_words
        out[i] = fw[b : b + d]
    return out


@njit(cache=True, nogil=True)
def _set_list(uw, b, d, cap, kept):
    uw[b + d] = kept.shape[0]
    for j in range(cap):
        uw[b + d + 1 + j] = FREE if j >= kept.shape[0] else kept[j]


@njit(cache=True, nogil=True)
def build_graph(vectors, order, entry, R, L, W, alpha, max_c):
    """One-pass incremental alpha-graph build over row ids ``0..n-1``.

    Returns the packed record buffer ``(n, d + 1 + R)`` as uint32 words.
    """
    n, d = vectors.shape
    rec = d + 1 + R
    uw = np.empty(n * rec, np.uint32)
    fw = uw.view(np.float32)
    for v in range(n):
        b = v * rec
        fw[b : b + d] = vectors[v]
        uw[b + d] = 0
        uw[b + d + 1 : b + rec] = FREE
    loc = np.arange(n).astype(np.int64)
    page_seen = np.ones(n, np.uint8)
    for t in range(order.shape[0]):
        p = order[t]
        bp = p * rec
        exp_i, _, _, _, _ = beam_search(fw[bp : bp + d], fw, uw, loc, 1, rec, rec, d, entry, L, W, page_seen)
        dp = uw[bp + d]
        pool = np.empty(exp_i.shape[0] + dp, np.int64)
        m = 0
        for i in range(exp_i.shape[0]):
            if exp_i[i] != p:
                pool[m] = exp_i[i]
                m += 1
        for j in range(dp):
            v = np.int64(uw[bp + d + 1 + j])
            dup = False
            for i in range(m):
                if pool[i] == v:
                    dup = True
                    break
            if not dup and v != p:
                pool[m] = v
                m += 1
        cands = pool[:m]
        kept = robust_prune(fw[bp : bp + d], cands, _gather(fw, cands, rec, d), alpha, R, max_c)
        _set_list(uw, bp, d, R, kept)
        for t2 in range(kept.shape[0]):
            u = kept[t2]
            bu = u * rec
            du = uw[bu + d]
            present = False
            for j in range(du):
                if uw[bu + d + 1 + j] == p:
                    present = True
                    break
            if present:
                continue
            if du < R:
                uw[bu + d + 1 + du] = p
                uw[bu + d] = du + 1
            else:
                c2 = np.empty(du + 1, np.int64)
                for j in range(du):
                    c2[j] = uw[bu + d + 1 + j]
                c2[du] = p
                k2 = robust_prune(fw[bu : bu + d], c2, _gather(fw, c2, rec, d), alpha, R, max_c)
                _set_list(uw, bu, d, R, k2)
    return uw.reshape(n, rec)
