"""Streaming-update workloads: base build, batched churn, fresh-truth recall."""

from __future__ import annotations

import dataclasses
import shutil
import tempfile
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..baseline import BaselineEngine, BaselineParams
from ..core import VectorDataset, knn_many, load_vectors, recall_at_k
from ..diskindex import DiskIndex
from ..errors import UsageError
from ..memgraph import BuildParams, SearchParams, build_index
from ..report import BatchReport
from ..updates import BatchSpec, LocalizedEngine, UpdateParams
from .stats import percentiles
from .synth import synth_split

ENGINES = ("localized", "baseline")


@dataclass
class WorkloadConfig:
    """Everything one workload run needs; loadable from a ``key = value`` file.

    Without ``dataset_path`` the data is a synthetic mixture of
    ``synth_n`` vectors in ``synth_d`` dimensions; without ``query_path``
    the queries are ``num_queries`` held-out draws from the same source.
    """

    dataset_path: str | None = None
    query_path: str | None = None
    engine: str = "localized"
    base_pct: float = 0.99
    batch_pct: float = 0.001
    num_batches: int = 10
    seed: int = 0
    synth_n: int = 10_000
    synth_d: int = 16
    synth_clusters: int = 10
    num_queries: int = 100
    R: int = 32
    r_prime: int = 33
    T: int = 2
    alpha: float = 1.2
    L_build: int = 75
    max_c: int = 500
    W: int = 4
    L_search: int = 120
    k: int = 10
    index_dir: str | None = None
    durable: bool = True
    # accepted for configuration parity; this harness runs each phase on one thread
    search_threads: int = 2
    insert_threads: int = 3
    delete_threads: int = 1

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise UsageError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if not 0.0 < self.base_pct <= 1.0 or not 0.0 <= self.batch_pct <= 1.0:
            raise UsageError("base_pct must lie in (0, 1] and batch_pct in [0, 1]")
        if self.num_batches < 0:
            raise UsageError("num_batches must be non-negative")
        if self.base_pct + self.num_batches * self.batch_pct > 1.0 + 1e-9:
            raise UsageError("base_pct + num_batches * batch_pct exceeds 1: not enough held-out vectors")
        if self.num_queries < 1 or self.synth_n < 1 or self.synth_d < 1 or self.synth_clusters < 1:
            raise UsageError("dataset sizes must be positive")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        # validates the parameter combinations early
        self.build_params()
        self.update_params()
        self.baseline_params()
        self.search_params()

    def build_params(self) -> BuildParams:
        return BuildParams(R=self.R, L_build=self.L_build, alpha=self.alpha, max_c=self.max_c, W=self.W)

    def update_params(self) -> UpdateParams:
        return UpdateParams(R=self.R, r_prime=self.r_prime, T=self.T, alpha=self.alpha, L_build=self.L_build, max_c=self.max_c, W=self.W)

    def baseline_params(self) -> BaselineParams:
        return BaselineParams(R=self.R, alpha=self.alpha, L_build=self.L_build, max_c=self.max_c, W=self.W)

    def search_params(self) -> SearchParams:
        return SearchParams(L_search=self.L_search, W=self.W, k=self.k)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> WorkloadConfig:
        values: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict) -> WorkloadConfig:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise UsageError(f"unknown workload key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)


def _coerce(key: str, raw, typ: str):
    if not isinstance(raw, str):
        return raw
    try:
        if typ.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw, 0)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    if typ.startswith("str") and raw.lower() in ("", "none"):
        return None
    return raw


@dataclass
class Workload:
    """A prepared dataset split: shuffled base rows, the insert pool and queries."""

    data: VectorDataset
    queries: np.ndarray
    base_rows: np.ndarray
    pool_rows: np.ndarray

    @property
    def base(self) -> VectorDataset:
        return self.data.subset(self.base_rows)


def prepare(config: WorkloadConfig) -> Workload:
    if config.dataset_path:
        data = load_vectors(config.dataset_path)
        if config.query_path:
            queries = np.array(load_vectors(config.query_path).data)
        else:
            # hold out queries from the tail of the file
            nq = min(config.num_queries, max(data.count - 1, 1))
            queries = np.array(data.data[-nq:])
            data = data.subset(np.arange(data.count - nq))
    else:
        data, queries = synth_split(config.synth_n, config.num_queries, config.synth_d, config.synth_clusters, config.seed)
        if config.query_path:
            queries = np.array(load_vectors(config.query_path).data)
    if queries.shape[1] != data.dim:
        raise UsageError("queries and dataset differ in dimension")
    perm = np.random.default_rng(config.seed).permutation(data.count)
    n_base = max(1, int(round(config.base_pct * data.count)))
    return Workload(data, queries, perm[:n_base], perm[n_base:])


def build_base(config: WorkloadConfig, workload: Workload, directory: str | Path) -> DiskIndex:
    base = workload.base
    graph = build_index(base, config.build_params(), seed=config.seed)
    return DiskIndex.create(graph, base, directory, config.r_prime, durable=config.durable)


def batch_size(config: WorkloadConfig, n: int) -> int:
    if config.batch_pct == 0:
        return 0
    return max(1, int(round(config.batch_pct * n)))


def batch_stream(config: WorkloadConfig, workload: Workload):
    """Yield each batch's (delete ids, insert rows) given the live ids so far.

    A generator protocol: send the current live ids, receive the next batch.
    """
    rng = np.random.default_rng([config.seed, 1])
    size = batch_size(config, workload.data.count)
    pool = workload.pool_rows
    used = 0
    live = yield None
    for _ in range(config.num_batches):
        if used + size > pool.size:
            raise UsageError("insert pool exhausted")
        live = np.sort(np.asarray(live, np.int64))
        dels = np.sort(rng.choice(live, size=min(size, live.size), replace=False))
        rows = pool[used : used + size]
        used += size
        live = yield dels, rows


def churn_batches(config: WorkloadConfig, workload: Workload, index: DiskIndex, seed: int = 0):
    """Endless batch source: delete random live ids, insert rows that are not live.

    Deleted rows return to the insert pool, so it never runs dry.
    """
    rng = np.random.default_rng([config.seed, 2, seed])
    size = batch_size(config, workload.data.count)
    ids = workload.data.ids.astype(np.int64)
    row_of = {int(v): r for r, v in enumerate(ids.tolist())}
    live_rows = np.zeros(workload.data.count, bool)
    live_rows[[row_of[int(v)] for v in index.live_ids().tolist()]] = True
    while True:
        pool = np.flatnonzero(~live_rows)
        rows = rng.choice(pool, size=min(size, pool.size), replace=False)
        live = np.flatnonzero(live_rows)
        dels = rng.choice(live, size=min(size, live.size), replace=False)
        live_rows[dels] = False
        live_rows[rows] = True
        yield BatchSpec(np.sort(ids[dels]), ids[rows], workload.data.data[rows])


def evaluate_recall(index: DiskIndex, queries: np.ndarray, params: SearchParams) -> tuple[float, list[float]]:
    """Mean recall@k against brute-force truth over the current live set, plus per-query latencies (seconds)."""
    live = index.live_dataset()
    k = min(params.k, live.count)
    truth = knn_many(live.data, live.ids.astype(np.int64), queries, k)
    total = 0.0
    lat = []
    for q, t in zip(queries, truth):
        t0 = time.perf_counter()
        res = index.search(q, params)
        lat.append(time.perf_counter() - t0)
        total += recall_at_k(res.ids[:k], t.tolist(), k)
    return total / len(queries), lat


def make_engine(config: WorkloadConfig, index: DiskIndex):
    if config.engine == "localized":
        return LocalizedEngine(index, config.update_params())
    return BaselineEngine(index, config.baseline_params())


def run_workload(
    config: WorkloadConfig,
    *,
    workload: Workload | None = None,
    base_dir: str | Path | None = None,
    on_report: Callable[[BatchReport], None] | None = None,
    evaluate: bool = True,
    after_batch: Callable[[DiskIndex, BatchReport], None] | None = None,
) -> list[BatchReport]:
    """Run ``num_batches`` churn batches and return one report per batch.

    ``base_dir`` reuses an already built base index (copied, never
    modified); otherwise the base index is built from scratch.
    ``after_batch`` sees the index after each batch, outside any timing.
    """
    workload = workload or prepare(config)
    tmp = None
    work = config.index_dir
    if work is None:
        tmp = tempfile.mkdtemp(prefix="streamann-")
        work = tmp
    work = Path(work)
    try:
        if base_dir is not None:
            if work.exists():
                shutil.rmtree(work)
            shutil.copytree(base_dir, work)
            index = DiskIndex.open(work, durable=config.durable)
        else:
            index = build_base(config, workload, work)
        reports = []
        with index:
            engine = make_engine(config, index)
            sp = config.search_params()
            stream = batch_stream(config, workload)
            next(stream)
            for b in range(config.num_batches):
                dels, rows = stream.send(index.live_ids())
                spec = BatchSpec(dels, workload.data.ids[rows].astype(np.int64), workload.data.data[rows])
                rep = engine.run_batch(spec)
                rep.batch_index = b
                rep.k = sp.k
                if evaluate:
                    with index.ledger.uncounted():
                        rep.recall_at_k, lat = evaluate_recall(index, workload.queries, sp)
                    rep.tail_latency_us = percentiles([t * 1e6 for t in lat])
                if after_batch is not None:
                    with index.ledger.uncounted():
                        after_batch(index, rep)
                reports.append(rep)
                if on_report is not None:
                    on_report(rep)
        return reports
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
