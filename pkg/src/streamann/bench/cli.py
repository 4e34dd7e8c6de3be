"""Command-line front end: ``streamann {build,gt,run,search,stats,audit}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..core import (
    VectorDataset,
    knn_many,
    load_vectors,
    read_ivecs,
    recall_at_k,
    write_ivecs,
)
from ..diskindex import DiskIndex
from ..diskindex.index import META_FILE
from ..errors import StreamAnnError
from ..memgraph import BuildParams, SearchParams, build_index
from .stats import percentiles
from .synth import synth_dataset
from .workload import ENGINES, WorkloadConfig, run_workload

EXIT_OK, EXIT_ERROR, EXIT_AUDIT = 0, 1, 2


def _dataset(args) -> VectorDataset:
    if args.data:
        data = load_vectors(args.data)
    elif args.synth:
        try:
            n, d, c = (int(v) for v in args.synth.split(","))
        except ValueError:
            raise SystemExit("--synth expects N,D,CLUSTERS") from None
        data = synth_dataset(n, d, c, args.seed)
    else:
        raise SystemExit("one of --data or --synth is required")
    if args.count is not None:
        data = data.subset(np.arange(min(args.count, data.count)))
    return data


def cmd_build(args) -> int:
    data = _dataset(args)
    params = BuildParams(R=args.R, L_build=args.L_build, alpha=args.alpha, max_c=args.max_c, W=args.W)
    t0 = time.perf_counter()
    graph = build_index(data, params, seed=args.seed)
    with DiskIndex.create(graph, data, args.out, args.r_prime) as index:
        info = {"path": str(args.out), "vectors": data.count, "dim": data.dim, "pages": index.num_pages, "entry": index.entry}
    info["seconds"] = round(time.perf_counter() - t0, 3)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_gt(args) -> int:
    data = load_vectors(args.data)
    queries = load_vectors(args.queries).data
    if args.count is not None:
        data = data.subset(np.arange(min(args.count, data.count)))
    truth = knn_many(data.data, data.ids.astype(np.int64), queries, args.k)
    write_ivecs(args.out, truth)
    print(json.dumps({"queries": int(truth.shape[0]), "k": int(truth.shape[1]), "out": str(args.out)}))
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {
        "engine": args.engine,
        "dataset_path": args.data,
        "query_path": args.queries,
        "num_batches": args.num_batches,
        "base_pct": args.base_pct,
        "batch_pct": args.batch_pct,
        "seed": args.seed,
        "index_dir": args.index_dir,
    }
    if args.config:
        config = WorkloadConfig.from_file(args.config, **overrides)
    else:
        config = WorkloadConfig.from_strings({k: v for k, v in overrides.items() if v is not None})

    def emit(rep) -> None:
        print(rep.to_json(), flush=True)

    run_workload(config, on_report=emit)
    return EXIT_OK


def cmd_search(args) -> int:
    queries = load_vectors(args.queries).data
    truth = read_ivecs(args.gt) if args.gt else None
    params = SearchParams(L_search=args.L_search, W=args.W, k=args.k)
    lat = []
    recalls = []
    with DiskIndex.open(args.index) as index:
        for i, q in enumerate(queries):
            t0 = time.perf_counter()
            res = index.search(q, params)
            lat.append((time.perf_counter() - t0) * 1e6)
            row = {"query": i, "ids": res.ids, "latency_us": round(lat[-1], 1)}
            if truth is not None:
                row["recall"] = recall_at_k(res.ids, truth[i][: args.k].tolist(), args.k)
                recalls.append(row["recall"])
            if args.verbose:
                print(json.dumps(row))
    summary = {"queries": len(lat), "latency_us": percentiles(lat)}
    if recalls:
        summary["recall_at_k"] = float(np.mean(recalls))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    # opening marks the index unclean, so report the flag as found on disk
    meta_path = Path(args.index) / META_FILE
    was_clean = meta_path.exists() and bool(json.loads(meta_path.read_text()).get("clean", False))
    with DiskIndex.open(args.index) as index:
        rep = index.audit()
        meta = index.meta(clean=was_clean)
        meta.pop("free_queue")
        meta.update(
            pages=index.num_pages,
            free_slots=len(index.free_queue),
            index_bytes=index.index_file.size,
            topology_bytes=index.topo_file.size,
            violations=len(rep.violations),
        )
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def cmd_audit(args) -> int:
    with DiskIndex.open(args.index) as index:
        rep = index.audit()
    for line in rep.violations:
        print(line)
    print(json.dumps({"ok": rep.ok, "violations": len(rep.violations), "live": rep.live, "allocated": rep.allocated, "free": rep.free}))
    return EXIT_OK if rep.ok else EXIT_AUDIT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamann", description="Disk-resident graph index with batched streaming updates.")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build an index from a dataset slice")
    b.add_argument("--data", help="fvecs or bvecs file")
    b.add_argument("--synth", metavar="N,D,CLUSTERS", help="generate a synthetic dataset instead")
    b.add_argument("--count", type=int, help="use only the first COUNT vectors")
    b.add_argument("--out", required=True, type=Path)
    b.add_argument("--R", type=int, default=32)
    b.add_argument("--r-prime", dest="r_prime", type=int, default=None)
    b.add_argument("--L-build", dest="L_build", type=int, default=75)
    b.add_argument("--alpha", type=float, default=1.2)
    b.add_argument("--max-c", dest="max_c", type=int, default=500)
    b.add_argument("--W", type=int, default=4)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("gt", help="brute-force ground truth to an ivecs file")
    g.add_argument("--data", required=True)
    g.add_argument("--queries", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--out", required=True, type=Path)
    g.set_defaults(func=cmd_gt)

    r = sub.add_parser("run", help="run a streaming-update workload, one JSON report per batch")
    r.add_argument("--config", help="key = value workload file")
    r.add_argument("--engine", choices=ENGINES)
    r.add_argument("--data", help="fvecs or bvecs file (default: synthetic)")
    r.add_argument("--queries")
    r.add_argument("--num-batches", dest="num_batches", type=int)
    r.add_argument("--base-pct", dest="base_pct", type=float)
    r.add_argument("--batch-pct", dest="batch_pct", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--index-dir", dest="index_dir")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("search", help="run queries against an index")
    s.add_argument("--index", required=True, type=Path)
    s.add_argument("--queries", required=True)
    s.add_argument("--gt", help="ivecs ground truth for recall")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--L-search", dest="L_search", type=int, default=120)
    s.add_argument("--W", type=int, default=4)
    s.add_argument("--verbose", action="store_true", help="print one line per query")
    s.set_defaults(func=cmd_search)

    st = sub.add_parser("stats", help="print index metadata and audit counters")
    st.add_argument("--index", required=True, type=Path)
    st.set_defaults(func=cmd_stats)

    a = sub.add_parser("audit", help="check every index invariant (exit 2 on violation)")
    a.add_argument("--index", required=True, type=Path)
    a.set_defaults(func=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StreamAnnError as exc:
        print(f"streamann {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
