from __future__ import annotations

import numpy as np
import pytest
from conftest import gaussian
from hypothesis import given
from hypothesis import strategies as st
from oracles import complete_graph, domination_violations, greedy_prune

from streamann.bench.synth import synth_dataset
from streamann.core import VectorDataset, brute_force_knn
from streamann.errors import UsageError
from streamann.memgraph import (
    BuildParams,
    MemGraph,
    SearchParams,
    beam_search,
    build_index,
    medoid,
    prune_vertex,
    robust_prune,
)

# -- params ---------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(R=1), dict(R=8, L_build=4), dict(alpha=0.9), dict(R=8, L_build=8, max_c=4), dict(W=0)])
def test_build_params_validation(kw):
    with pytest.raises(UsageError):
        BuildParams(**kw)


def test_search_params_validation():
    with pytest.raises(UsageError):
        SearchParams(L_search=5, k=6)
    with pytest.raises(UsageError):
        SearchParams(W=0)
    assert SearchParams() == SearchParams(120, 4, 10)


def test_defaults():
    assert BuildParams() == BuildParams(R=32, L_build=75, alpha=1.2, max_c=500, W=4)


# -- robust prune -----------------------------------------------------------------


def test_prune_trivial_cases():
    p = np.zeros(2, np.float32)
    assert robust_prune(p, [], np.empty((0, 2)), 1.2, 4) == []
    assert robust_prune(p, [7], np.ones((1, 2)), 3.0, 4) == [7]


def test_prune_twelve_points_domination():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(2).astype(np.float32)
    vecs = (p + rng.standard_normal((12, 2))).astype(np.float32)
    ids = list(range(1, 13))
    kept = robust_prune(p, ids, vecs, 1.2, 4)
    assert domination_violations(p, ids, vecs, kept, 1.2, 4, 500) == []


def test_prune_domination_1000_instances():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        d = int(rng.integers(1, 9))
        alpha = float(rng.uniform(1.0, 2.0))
        R = int(rng.integers(1, 20))
        max_c = int(rng.integers(R, 70))
        p = rng.standard_normal(d).astype(np.float32)
        vecs = rng.standard_normal((n, d)).astype(np.float32)
        ids = rng.permutation(1000)[:n]
        kept = robust_prune(p, ids, vecs, alpha, R, max_c)
        assert domination_violations(p, ids, vecs, kept, alpha, R, max_c) == []


@given(st.integers(0, 2**32 - 1))
def test_prune_matches_reference_exact_arithmetic(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    d = int(rng.integers(1, 5))
    p = rng.integers(-3, 4, d).astype(np.float32)
    vecs = rng.integers(-3, 4, (n, d)).astype(np.float32)
    ids = rng.permutation(100)[:n]
    R = int(rng.integers(1, 12))
    max_c = int(rng.integers(R, 45))
    alpha = float(rng.choice([1.0, 1.2, 1.5]))
    assert robust_prune(p, ids, vecs, alpha, R, max_c) == greedy_prune(p, ids, vecs, alpha, R, max_c)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_prune_never_exceeds_R(seed, R):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 80))
    kept = robust_prune(np.zeros(3, np.float32), np.arange(n), rng.standard_normal((n, 3)), 1.2, R)
    assert len(kept) <= R


def test_prune_input_errors():
    with pytest.raises(UsageError):
        robust_prune(np.zeros(2), [1, 1], np.zeros((2, 2)), 1.2, 4)
    with pytest.raises(UsageError):
        robust_prune(np.zeros(2), [1, 2], np.zeros((1, 2)), 1.2, 4)


def test_prune_vertex_rejects_unknown_and_self():
    g = MemGraph.from_lists(gaussian(5, 2), [[] for _ in range(5)], R=2)
    assert len(prune_vertex(g, 0, [1, 2, 3], 1.2, 2)) <= 2
    with pytest.raises(UsageError):
        prune_vertex(g, 0, [1, 9], 1.2, 2)
    with pytest.raises(UsageError):
        prune_vertex(g, 0, [0, 1], 1.2, 2)


# -- beam search ----------------------------------------------------------------------


def test_single_vertex_search():
    g = MemGraph.from_lists(np.ones((1, 3), np.float32), [[]], R=2)
    res = beam_search(g, np.zeros(3), SearchParams(L_search=4, k=1))
    assert res.ids == [0]


def test_complete_graph_equals_brute_force_200_instances():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        d = int(rng.integers(1, 10))
        x = rng.standard_normal((n, d)).astype(np.float32)
        k = int(rng.integers(1, n + 1))
        q = rng.standard_normal(d).astype(np.float32)
        res = beam_search(complete_graph(x), q, SearchParams(L_search=n + int(rng.integers(0, 5)), W=int(rng.integers(1, 6)), k=k))
        assert res.ids == brute_force_knn(VectorDataset(x), q, k)


def test_complete_graph_32_vectors():
    x = gaussian(32, 6, seed=9)
    q = gaussian(1, 6, seed=10)[0]
    res = beam_search(complete_graph(x), q, SearchParams(L_search=32, k=10))
    assert res.ids == brute_force_knn(VectorDataset(x), q, 10)


def test_tombstones_leave_only_survivor():
    x = gaussian(20, 4, seed=4)
    res = beam_search(complete_graph(x), x[3], SearchParams(L_search=20, k=1), tombstones=set(range(20)) - {11})
    assert res.ids == [11]


def test_search_is_deterministic_and_checks_input(small_graph):
    q = gaussian(1, 8, seed=77)[0]
    a = beam_search(small_graph, q, SearchParams())
    b = beam_search(small_graph, q, SearchParams())
    assert a.ids == b.ids and np.array_equal(a.visited, b.visited)
    with pytest.raises(UsageError):
        beam_search(small_graph, np.zeros(3), SearchParams())


# -- build ----------------------------------------------------------------------------


def test_build_single_vector():
    g = build_index(VectorDataset(np.ones((1, 4), np.float32)))
    assert g.n == 1 and g.entry == 0 and g.neighbors(0) == []


def test_build_empty_dataset_rejected():
    with pytest.raises(UsageError):
        build_index(VectorDataset(np.empty((0, 4), np.float32)))


def test_self_retrieval_on_clusters():
    ds = synth_dataset(200, 16, clusters=4, seed=1)
    g = build_index(ds, BuildParams(R=16, L_build=32))
    sp = SearchParams(L_search=64, k=1)
    hits = sum(beam_search(g, ds.data[i], sp).ids == [i] for i in range(200))
    assert hits >= 0.99 * 200


def test_medoid_matches_summed_distance_oracle():
    x = gaussian(300, 5, seed=12)
    sums = ((x[:, None, :].astype(np.float64) - x[None, :, :]) ** 2).sum(axis=(1, 2))
    assert medoid(x) == int(np.argmin(sums))


def test_build_is_seed_deterministic(small_data):
    a = build_index(small_data, BuildParams(R=8, L_build=16), seed=3)
    b = build_index(small_data, BuildParams(R=8, L_build=16), seed=3)
    assert a.adjacency_lists() == b.adjacency_lists() and a.entry == b.entry


@given(st.integers(0, 2**32 - 1), st.integers(2, 120), st.integers(1, 6), st.integers(2, 8))
def test_build_structural_invariants(seed, n, d, R):
    rng = np.random.default_rng(seed)
    x = rng.integers(-2, 3, (n, d)).astype(np.float32)  # many duplicates and ties
    g = build_index(VectorDataset(x), BuildParams(R=R, L_build=2 * R), seed=seed % 1000)
    assert 0 <= g.entry < n
    for v, nbrs in enumerate(g.adjacency_lists()):
        assert len(nbrs) <= R
        assert v not in nbrs
        assert len(set(nbrs)) == len(nbrs)
        assert all(0 <= u < n for u in nbrs)
        assert len(nbrs) >= 1
