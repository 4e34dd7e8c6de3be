"""End-to-end acceptance checks, one test per numbered criterion.

Each test prints a ``CRITERION n: PASS|FAIL`` line (also collected into the
terminal summary) before asserting. The comparative runs share one base
index per dataset and are built once per session.
"""

from __future__ import annotations

import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE
from oracles import complete_graph, domination_violations, twin_trial

import streamann._kernels as kernels
import streamann.updates as updates_mod
from streamann.bench.latency import measure, service_time
from streamann.bench.synth import synth_dataset
from streamann.bench.workload import (
    WorkloadConfig,
    build_base,
    churn_batches,
    prepare,
    run_workload,
)
from streamann.core import VectorDataset, brute_force_knn
from streamann.diskindex import DiskIndex
from streamann.memgraph import (
    BuildParams,
    SearchParams,
    beam_search,
    build_index,
    robust_prune,
)
from streamann.report import BatchReport
from streamann.updates import LocalizedEngine

FREE = 0xFFFFFFFF

DESK = dict(synth_n=100_000, synth_d=128, synth_clusters=100, num_queries=200, seed=7, num_batches=10)
WIDE = dict(synth_n=20_000, synth_d=960, synth_clusters=20, num_queries=50, seed=7, num_batches=10)
FAST = dict(synth_n=10_000, synth_d=16, synth_clusters=10, num_queries=100, seed=7, num_batches=10)


def verdict(key: str, ok: bool, detail: str) -> None:
    line = f"CRITERION {key}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE[key] = line
    print(line)
    assert ok, line


# -- shared comparative runs ----------------------------------------------------------


@dataclass
class LightRepair:
    kernel_calls: int
    post_degree: int


@dataclass
class Comparison:
    n: int
    R: int
    localized: list[BatchReport]
    baseline: list[BatchReport]
    files_agree: list[bool] = field(default_factory=list)
    light: list[list[LightRepair]] = field(default_factory=list)
    live_before: list[int] = field(default_factory=list)
    base_dir: Path | None = None
    workload: object = None
    config: WorkloadConfig | None = None


def files_agree(path: Path) -> bool:
    """Compare every topology row with the matching record, straight from the files."""
    with DiskIndex.open(path) as ix:
        lay = ix.layout
        live = set(ix.live_ids().tolist())
    raw = np.fromfile(path / "index.dat", np.uint8)
    recs = raw.view(lay.page_dtype())["rec"].reshape(-1)
    topo = np.fromfile(path / "topology.dat", lay.topo_dtype())
    owners = topo["owner"].astype(np.int64)
    rows = np.flatnonzero(owners != FREE)
    if set(owners[rows].tolist()) != live or rows.size != len(live) or rows.size and rows[-1] >= recs.size:
        return False
    deg = recs["deg"][rows]
    if not np.array_equal(deg, topo["deg"][rows]):
        return False
    cols = np.arange(lay.r_prime)[None, :] < deg[:, None]
    return bool(np.array_equal(np.where(cols, recs["nbr"][rows], 0), np.where(cols, topo["nbr"][rows], 0)))


def compare(kw: dict, root: Path, *, instrument: bool) -> Comparison:
    config = WorkloadConfig(**kw)
    workload = prepare(config)
    base = root / "base"
    build_base(config, workload, base).close()
    n = workload.base_rows.size
    agree: list[bool] = []
    light: list[list[LightRepair]] = []
    live_before: list[int] = [n]
    current: list[LightRepair] = []

    def after(index: DiskIndex, rep: BatchReport) -> None:
        agree.append(files_agree(index.path))
        light.append(list(current))
        current.clear()
        live_before.append(index.live_count)

    with pytest.MonkeyPatch.context() as mp:
        if instrument:
            calls = [0]
            real_prune, real_repair = kernels.robust_prune, updates_mod.asnr_repair

            def counting_prune(*args):
                calls[0] += 1
                return real_prune(*args)

            def watched_repair(p, D, C, params, *args, **kwargs):
                before = calls[0]
                out, pruned = real_repair(p, D, C, params, *args, **kwargs)
                if len(set(D)) < params.T:
                    current.append(LightRepair(calls[0] - before, len(out)))
                return out, pruned

            mp.setattr(kernels, "robust_prune", counting_prune)
            mp.setattr(updates_mod, "asnr_repair", watched_repair)
        loc = run_workload(WorkloadConfig(engine="localized", **kw), workload=workload, base_dir=base, after_batch=after)
    loc_agree, loc_light = list(agree), list(light)
    agree.clear()
    base_reports = run_workload(WorkloadConfig(engine="baseline", **kw), workload=workload, base_dir=base)
    return Comparison(n, config.R, loc, base_reports, loc_agree, loc_light, live_before[:-1], base, workload, config)


@pytest.fixture(scope="session")
def desk(tmp_path_factory) -> Comparison:
    return compare(DESK, tmp_path_factory.mktemp("desk"), instrument=True)


@pytest.fixture(scope="session")
def wide(tmp_path_factory) -> Comparison:
    return compare(WIDE, tmp_path_factory.mktemp("wide"), instrument=False)


@pytest.fixture(scope="session")
def fast(tmp_path_factory) -> Comparison:
    return compare(FAST, tmp_path_factory.mktemp("fast"), instrument=False)


def pairs(c: Comparison):
    return list(zip(c.localized, c.baseline))


# -- criteria --------------------------------------------------------------------------


def test_criterion_1_light_repairs_never_prune(desk):
    repairs = [r for batch in desk.light for r in batch]
    bad = [r for r in repairs if r.kernel_calls or r.post_degree > desk.R]
    ok = len(desk.light) == 10 and len(repairs) > 0 and not bad
    verdict("1", ok, f"{len(repairs)} replacement repairs over {len(desk.light)} batches, {len(bad)} with a prune call or degree > R")


def test_criterion_2_delete_prunes(desk):
    ratios = [l.prunes.delete_prunes / b.prunes.delete_prunes for l, b in pairs(desk) if b.prunes.delete_prunes]
    ok = len(ratios) == 10 and max(ratios) <= 0.20
    tot = sum(l.prunes.delete_prunes for l in desk.localized) / max(1, sum(b.prunes.delete_prunes for b in desk.baseline))
    verdict("2", ok, f"per-batch localized/baseline delete prunes max {max(ratios, default=float('nan')):.3f} (total {tot:.3f}, limit 0.20)")


def test_criterion_3_patch_prunes(desk):
    ratios = [l.prunes.patch_prunes / b.prunes.patch_prunes for l, b in pairs(desk) if b.prunes.patch_prunes]
    ok = len(ratios) == 10 and max(ratios) <= 0.60
    tot = sum(l.prunes.patch_prunes for l in desk.localized) / max(1, sum(b.prunes.patch_prunes for b in desk.baseline))
    verdict("3", ok, f"per-batch localized/baseline patch prunes max {max(ratios, default=float('nan')):.3f} (total {tot:.3f}, limit 0.60)")


def test_criterion_4_recall_parity(desk):
    gaps = [abs(l.recall_at_k - b.recall_at_k) for l, b in pairs(desk)]
    ok = len(gaps) == 10 and max(gaps) <= 0.02
    lo = min(min(l.recall_at_k, b.recall_at_k) for l, b in pairs(desk))
    verdict("4", ok, f"max |recall@10 gap| {max(gaps):.4f} over 10 batches (lowest recall {lo:.4f}, limit 0.02)")


def _read_ratios(c: Comparison) -> tuple[list[float], list[float], list[float]]:
    total = [l.io.total_read_bytes / b.io.total_read_bytes for l, b in pairs(c)]
    maint = [l.maintenance_io().total_read_bytes / b.maintenance_io().total_read_bytes for l, b in pairs(c)]
    writes = [l.io.total_write_bytes / b.io.total_write_bytes for l, b in pairs(c)]
    return total, maint, writes


def test_criterion_5a_read_io_d128(desk):
    total, maint, writes = _read_ratios(desk)
    ok = max(total) <= 1 / 3 and max(writes) <= 1.0
    verdict(
        "5a",
        ok,
        f"d=128: localized/baseline read bytes max {max(total):.3f} (limit 0.333); "
        f"excluding insert-phase search {max(maint):.3f}; writes max {max(writes):.3f} (limit 1)",
    )


def test_criterion_5b_read_io_d960(wide):
    total, maint, writes = _read_ratios(wide)
    ok = max(total) <= 1 / 10 and max(writes) <= 1.0
    verdict(
        "5b",
        ok,
        f"d=960: localized/baseline read bytes max {max(total):.3f} (limit 0.100); "
        f"excluding insert-phase search {max(maint):.3f}; writes max {max(writes):.3f} (limit 1)",
    )


def _throughput(reports: list[BatchReport]) -> float:
    return sum(r.deletes + r.inserts for r in reports) / sum(r.wall_seconds for r in reports)


def test_criterion_6_throughput(desk, wide, fast):
    runs = {"100k x 128": desk, "20k x 960": wide, "10k x 16": fast}
    ratio = {name: _throughput(c.localized) / _throughput(c.baseline) for name, c in runs.items()}
    per_batch = min(l.updates_per_second / b.updates_per_second for c in runs.values() for l, b in pairs(c))
    ok = min(ratio.values()) >= 1.5
    shown = ", ".join(f"{k} {v:.2f}x" for k, v in ratio.items())
    verdict("6", ok, f"localized/baseline updates per second per run: {shown} (limit 1.5x; slowest single batch {per_batch:.2f}x)")


def test_criterion_7_affected_fraction(desk):
    frac = [l.prunes.delete_affected / n for l, n in zip(desk.localized, desk.live_before)]
    single = [l.lost_histogram.get(1, 0) / l.prunes.delete_affected for l in desk.localized if l.prunes.delete_affected]
    ok = len(single) == 10 and max(frac) <= 0.15 and min(single) >= 0.70
    verdict("7", ok, f"affected fraction max {max(frac):.4f} (limit 0.15); share losing exactly one neighbor min {min(single):.3f} (floor 0.70)")


def test_criterion_8_topology_consistency(desk):
    share = [l.topology_sync_seconds / l.wall_seconds for l in desk.localized]
    ok = len(desk.files_agree) == 10 and all(desk.files_agree) and max(share) <= 0.10
    verdict("8", ok, f"file comparison passed after {sum(desk.files_agree)}/10 batches; sync share of batch time max {max(share):.3f} (limit 0.10)")


def test_criterion_9a_prune_domination():
    rng = np.random.default_rng(91)
    bad = 0
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
        bad += bool(domination_violations(p, ids, vecs, kept, alpha, R, max_c))
    verdict("9a", bad == 0, f"{bad} of 1000 random instances violate the domination contract")


def test_criterion_9b_complete_graph_search():
    rng = np.random.default_rng(92)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        d = int(rng.integers(1, 12))
        x = rng.standard_normal((n, d)).astype(np.float32)
        k = int(rng.integers(1, n + 1))
        q = rng.standard_normal(d).astype(np.float32)
        sp = SearchParams(L_search=n + int(rng.integers(0, 5)), W=int(rng.integers(1, 6)), k=k)
        bad += beam_search(complete_graph(x), q, sp).ids != brute_force_knn(VectorDataset(x), q, k)
    verdict("9b", bad == 0, f"{bad} of 200 complete-graph searches differ from brute force")


def test_criterion_9c_engines_match_twins(tmp_path):
    failures = []
    for trial in range(50):
        engine = ("localized", "baseline")[trial % 2]
        problems = twin_trial(tmp_path / f"t{trial}", 9300 + trial, engine, batches=5, max_n=2000, ties=trial % 4 >= 2)
        if problems:
            failures.append(f"trial {trial} ({engine}): {problems[0]}")
    verdict("9c", not failures, f"{50 - len(failures)}/50 randomized trials equal the dictionary twin" + (f"; first: {failures[0]}" if failures else ""))


def test_criterion_10_storage_ratio(tmp_path):
    report = []
    ok = True
    for d in (128, 256, 960):
        ds = synth_dataset(3000, d, 4, seed=d)
        g = build_index(ds, BuildParams(R=32, L_build=75))
        with DiskIndex.create(g, ds, tmp_path / f"d{d}", r_prime=33) as ix:
            actual = ix.topo_file.size / ix.index_file.size
        expected = 4 * 33 / (4 * 33 + 4 + 4 * d)
        ok &= abs(actual - expected) <= 0.01
        report.append(f"d={d} {actual:.4f} vs {expected:.4f}")
    verdict("10", ok, "topology/index size " + ", ".join(report) + " (limit +-0.01)")


def test_criterion_11_tail_latency(desk, tmp_path):
    work = tmp_path / "lat"
    shutil.copytree(desk.base_dir, work)
    wl, cfg = desk.workload, desk.config
    sp = cfg.search_params()
    with DiskIndex.open(work) as ix:
        ix.share(capacity=wl.data.count + 1)
        per_query = service_time(ix, wl.queries, sp)
        rate = 0.3 / per_query
        idle = measure(ix, wl.queries, sp, rate=rate, count=1000)
        engine = LocalizedEngine(ix, cfg.update_params())
        source = churn_batches(cfg, wl, ix)
        t0 = time.perf_counter()
        busy = measure(ix, wl.queries, sp, rate=rate, count=1000, next_batch=lambda: engine.run_batch(next(source)))
        elapsed = time.perf_counter() - t0
        audit_ok = ix.audit().ok
    ratio = busy.tails["p99"] / idle.tails["p99"]
    ok = busy.batches >= 1 and audit_ok and ratio <= 1.25
    verdict(
        "11",
        ok,
        f"p99 {busy.tails['p99'] / 1e3:.1f} ms with {busy.batches} concurrent batches in {elapsed:.0f} s vs {idle.tails['p99'] / 1e3:.1f} ms idle, "
        f"ratio {ratio:.3f} (limit 1.25)",
    )
