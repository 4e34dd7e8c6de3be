from __future__ import annotations

import json
import math
import os

import numpy as np
import pytest
from conftest import gaussian
from hypothesis import given
from hypothesis import strategies as st

from streamann.core import VectorDataset
from streamann.diskindex import (
    DiskIndex,
    IndexReader,
    IoLedger,
    PageFile,
    PageLayout,
    create_index,
)
from streamann.diskindex.pageio import runs
from streamann.diskindex.state import IndexState
from streamann.errors import StorageError, UsageError
from streamann.memgraph import BuildParams, MemGraph, SearchParams, build_index

FREE = 0xFFFFFFFF


def reread_records(index: DiskIndex) -> dict[int, tuple[bytes, list[int]]]:
    """Decode every live record straight from the file bytes."""
    lay = index.layout
    raw = open(index.path / "index.dat", "rb").read()
    out = {}
    for vid in index.live_ids().tolist():
        page, slot = index.location(vid)
        off = page * lay.page_size + slot * lay.record_size
        rec = raw[off : off + lay.record_size]
        vec = rec[: 4 * lay.dim]
        deg = int.from_bytes(rec[4 * lay.dim : 4 * lay.dim + 4], "little")
        nbrs = np.frombuffer(rec[4 * lay.dim + 4 :], "<u4")[:deg].tolist()
        out[vid] = (vec, nbrs)
    return out


# -- layout ---------------------------------------------------------------------


def test_layout_arithmetic():
    lay = PageLayout(960, 33)
    assert lay.record_size == 3976 and lay.nodes_per_page == 1 and lay.padding == 120
    lay = PageLayout(128, 33)
    assert lay.record_size == 648 and lay.nodes_per_page == 6
    assert lay.page_dtype().itemsize == 4096


def test_layout_rejects_oversized_records():
    with pytest.raises(UsageError):
        PageLayout(1024, 33)


@given(st.integers(1, 990), st.integers(1, 40))
def test_records_never_span_pages(d, rp):
    if 4 * d + 4 + 4 * rp > 4096:
        with pytest.raises(UsageError):
            PageLayout(d, rp)
        return
    lay = PageLayout(d, rp)
    assert lay.nodes_per_page >= 1
    assert lay.nodes_per_page * lay.record_size + lay.padding == 4096
    assert lay.page_dtype().itemsize == 4096


# -- create / open -----------------------------------------------------------------


def test_create_single_vertex(tmp_path):
    ds = VectorDataset(np.ones((1, 4), np.float32))
    with create_index(build_index(ds), ds, tmp_path / "one", 33) as ix:
        assert ix.num_pages == 1
        assert ix.location(0) == (0, 0)
        assert len(ix.free_queue) == 0
        meta = json.loads((tmp_path / "one" / "meta.json").read_text())
        assert {"dim", "R", "r_prime", "page_size", "entry", "live_count", "format_version"} <= meta.keys()


def test_reopen_round_trip_bitwise(tmp_path, small_data, small_graph):
    DiskIndex.create(small_graph, small_data, tmp_path / "ix", r_prime=9).close()
    with DiskIndex.open(tmp_path / "ix") as ix:
        recs = reread_records(ix)
        for v in range(small_data.count):
            vec, nbrs = recs[v]
            assert vec == small_data.data[v].tobytes()
            assert nbrs == small_graph.neighbors(v)
        assert ix.entry == small_graph.entry
        assert ix.audit().ok


def test_create_maps_rows_to_external_ids(tmp_path):
    x = gaussian(50, 4, seed=2)
    ids = np.arange(50)[::-1] * 7 + 3
    ds = VectorDataset(x, ids)
    g = build_index(ds, BuildParams(R=4, L_build=8))
    with DiskIndex.create(g, ds, tmp_path / "ix") as ix:
        adj = ix.adjacency()
        for row in range(50):
            assert adj[int(ids[row])] == [int(ids[u]) for u in g.neighbors(row)]
        assert ix.audit().ok


def test_create_rejects_degree_over_capacity(tmp_path, small_data, small_graph):
    with pytest.raises(UsageError):
        DiskIndex.create(small_graph, small_data, tmp_path / "ix", r_prime=4)


def test_open_rejects_wrong_version_and_missing(tmp_path, small_index):
    with pytest.raises(StorageError):
        DiskIndex.open(tmp_path / "nowhere")
    meta = json.loads((small_index.path / "meta.json").read_text())
    meta["format_version"] = 99
    (small_index.path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(StorageError):
        DiskIndex.open(small_index.path)


def test_unclean_open_rebuilds_free_queue(tmp_path, small_data, small_graph):
    ix = DiskIndex.create(small_graph, small_data, tmp_path / "ix", r_prime=9)
    slots = [ix.release(v) for v in (5, 9)]
    ix.sync_topology([], freed=slots)
    # simulate a crash: metadata still says unclean, free queue not persisted
    meta = ix.meta(clean=False)
    ix.index_file.close()
    ix.topo_file.close()
    (tmp_path / "ix" / "meta.json").write_text(json.dumps(meta))
    with DiskIndex.open(tmp_path / "ix") as again:
        assert sorted(again.free_queue) == sorted(slots)
        assert not again.is_live(5) and again.is_live(6)


# -- page I/O --------------------------------------------------------------------------


def test_read_pages_contract(small_index):
    before = small_index.io.copy()
    assert small_index.read_pages([]) == {}
    assert small_index.io == before
    got = small_index.read_pages([0])
    assert len(got[0]) == 4096
    assert small_index.io.read_pages == before.read_pages + 1


@given(st.lists(st.integers(0, 59), min_size=1, max_size=100))
def test_read_pages_counts_distinct(tmp_path_factory, ids):
    path = tmp_path_factory.mktemp("pf") / "f"
    ledger = IoLedger()
    pf = PageFile(path, 4096, ledger, create=True, durable=False)
    pf.extend_to(60)
    got, buf = pf.read(ids)
    assert got.tolist() == sorted(set(ids))
    assert ledger.total.read_pages == len(set(ids))
    assert ledger.total.read_bytes == 4096 * len(set(ids))
    pf.close()


def test_read_pages_out_of_bounds(small_index):
    with pytest.raises(UsageError):
        small_index.read_pages([small_index.num_pages])


def test_write_pages_round_trip_and_errors(small_index):
    before = small_index.io.copy()
    small_index.write_pages({})
    assert small_index.io == before
    payload = bytes(range(256)) * 16
    small_index.write_pages({1: payload})
    assert small_index.read_pages([1])[1] == payload
    assert small_index.io.write_bytes == before.write_bytes + 4096
    with pytest.raises(UsageError):
        small_index.write_pages({0: b"short"})
    with pytest.raises(UsageError):
        small_index.write_pages({small_index.num_pages + 3: payload})


def test_runs_split():
    assert runs(np.array([1, 2, 3, 7, 9, 10])) == [(0, 1, 3), (3, 7, 1), (4, 9, 2)]
    assert runs(np.array([], np.int64)) == []


# -- topology ----------------------------------------------------------------------------


def in_neighbors_oracle(adj: dict[int, list[int]], deleted: set[int]) -> dict[int, set[int]]:
    out = {}
    for p, nbrs in adj.items():
        if p in deleted:
            continue
        hit = set(nbrs) & deleted
        if hit:
            out[p] = hit
    return out


def test_scan_topology_empty(small_index):
    assert small_index.scan_topology([]) == {}


def test_scan_topology_star(tmp_path):
    n = 12
    x = gaussian(n, 3, seed=8)
    lists = [[0] for _ in range(n)]
    lists[0] = [1]
    g = MemGraph.from_lists(x, lists, R=4, entry=1)
    with DiskIndex.create(g, VectorDataset(x), tmp_path / "star") as ix:
        assert ix.scan_topology([0]) == {v: {0} for v in range(1, n)}


def test_scan_topology_matches_transpose_and_reads_only_topology(tmp_path):
    x = gaussian(2000, 8, seed=5)
    ds = VectorDataset(x)
    g = build_index(ds, BuildParams(R=12, L_build=24))
    rng = np.random.default_rng(0)
    with DiskIndex.create(g, ds, tmp_path / "ix") as ix:
        adj = ix.adjacency()
        for _ in range(5):
            deleted = set(rng.choice(2000, 2, replace=False).tolist())
            before = ix.io.copy()
            got = ix.scan_topology(deleted)
            after = ix.io
            assert got == in_neighbors_oracle(adj, deleted)
            assert after.read_bytes == before.read_bytes
            assert after.topology_read_bytes - before.topology_read_bytes == ix.topo_file.size


def test_sync_topology_rewrites_only_touched_pages(small_index):
    ix = small_index
    assert ix.sync_topology([]) == 0
    trec = ix.layout.topo_record_size
    for v in (0, 27, 28, 100):
        g = ix.slot_of(v)
        before = ix.io.copy()
        touched = ix.sync_topology([v])
        first, last = g * trec // 4096, ((g + 1) * trec - 1) // 4096
        assert touched == last - first + 1
        assert ix.io.topology_write_pages - before.topology_write_pages == touched
        assert ix.io.read_bytes - before.read_bytes <= 4096


def test_sync_topology_restores_equality(small_index):
    ix = small_index
    v = 42
    recs, s = (buf := ix.buffer()).record(ix.slot_of(v))
    recs["deg"][s] = 2
    buf.mark_dirty(ix.slot_of(v) // ix.layout.nodes_per_page)
    buf.flush()
    assert not ix.topology_matches()
    ix.sync_topology([v])
    assert ix.topology_matches()


def test_storage_ratio_close_to_formula(tmp_path):
    for d in (128, 256, 960):
        ds = VectorDataset(gaussian(600, d, seed=d))
        g = MemGraph.from_lists(ds.data, [[(i + 1) % 600] for i in range(600)], R=32)
        with DiskIndex.create(g, ds, tmp_path / f"r{d}", r_prime=33) as ix:
            ratio = ix.topo_file.size / ix.index_file.size
            assert abs(ratio - ix.layout.expected_topology_ratio()) <= 0.01


# -- location map and slots ------------------------------------------------------------------


def test_allocate_slot_fifo_and_append(tmp_path):
    lay = PageLayout(4, 9)
    ds = VectorDataset(gaussian(lay.nodes_per_page, 4, seed=1))  # exactly one full page
    g = build_index(ds, BuildParams(R=8, L_build=8))
    with DiskIndex.create(g, ds, tmp_path / "ix", r_prime=9) as ix:
        npp = ix.layout.nodes_per_page
        pages = ix.num_pages
        assert ix.allocate_slot() == (pages, 0)  # last page full: new page appended
        assert ix.num_pages == pages + 1
        g3 = ix.slot_of(3)
        ix.release(3)
        assert ix.allocate_slot() == divmod(g3, npp)  # recycled slot comes back first
        assert len(ix.free_queue) == 0
        ix.free_queue.extend([2 * npp + 1])
        assert ix.allocate_slot() == (2, 1)


def test_assign_and_release_contract(small_index):
    ix = small_index
    with pytest.raises(UsageError):
        ix.assign(3, 999)  # already live
    g = ix.release(3)
    assert not ix.is_live(3) and ix.owner(*ix.layout.locate(g)) is None
    with pytest.raises(UsageError):
        ix.slot_of(3)


def test_audit_detects_corruption(small_index):
    ix = small_index
    assert ix.audit().ok
    v = 10
    recs, s = (buf := ix.buffer()).record(ix.slot_of(v))
    recs["nbr"][s][0] = v  # self-loop
    buf.mark_dirty(ix.slot_of(v) // ix.layout.nodes_per_page)
    buf.flush()
    rep = ix.audit()
    assert not rep.ok
    assert any("self-loop" in m for m in rep.violations)
    assert any("topology" in m for m in rep.violations)


def test_audit_detects_dangling_and_shared_slots(small_index):
    ix = small_index
    ix.release(ix.adjacency()[0][0])
    rep = ix.audit()
    assert any("not live" in m for m in rep.violations)


# -- shared state and cross-process reader ------------------------------------------------------


def test_state_share_attach_round_trip():
    st_ = IndexState(4)
    st_.loc[:] = [3, -1, 7, 0]
    st_.entry = 2
    name = st_.share(10)
    other = IndexState.attach(name)
    assert other.loc[:4].tolist() == [3, -1, 7, 0] and other.entry == 2 and other.capacity == 10
    st_.loc[1] = 5
    assert other.loc[1] == 5
    with pytest.raises(StorageError):
        st_.ensure(11)
    other.release()
    st_.release()
    st_.ensure(20)
    assert st_.loc[1] == 5 and st_.capacity >= 20


def test_reader_matches_kernel_search(small_index):
    name = small_index.share()
    sp = SearchParams(L_search=40, k=5)
    with IndexReader(small_index.path, name) as reader:
        for q in gaussian(25, 8, seed=31):
            a = small_index.search(q, sp)
            b = reader.search(q, sp)
            assert a.ids == b.ids and a.dists == b.dists
            assert np.array_equal(a.visited, b.visited)


def test_search_counts_distinct_pages(small_index):
    before = small_index.io.read_pages
    res = small_index.search(gaussian(1, 8, seed=4)[0], SearchParams())
    assert res.pages == small_index.io.read_pages - before
    assert 1 <= res.pages <= small_index.num_pages


def test_index_file_bytes_on_disk(small_index):
    assert os.path.getsize(small_index.path / "index.dat") == small_index.num_pages * 4096
    tail = small_index.tail
    assert os.path.getsize(small_index.path / "topology.dat") == tail * small_index.layout.topo_record_size
    assert small_index.num_pages == math.ceil(tail / small_index.layout.nodes_per_page)
