"""Disk-resident proximity-graph index with localized batched updates.

The public surface, module by module:

* ``core``: vectors, distances, TEXMEX I/O, recall and exact k-NN.
* ``memgraph``: in-memory graph build, alpha-pruning and beam search.
* ``diskindex``: the paged on-disk index, its topology file and I/O ledger.
* ``updates``: the localized batch engine.
* ``baseline``: the full-scan batch engine it is compared against.
* ``bench``: workloads, synthetic data and the CLI.
"""

from .baseline import BaselineEngine, BaselineParams, run_batch_baseline
from .core import (
    QuerySet,
    VectorDataset,
    brute_force_knn,
    distance,
    load_vectors,
    recall_at_k,
)
from .diskindex import DiskIndex, IndexReader, create_index
from .errors import FormatError, StorageError, StreamAnnError, UsageError
from .memgraph import (
    BuildParams,
    MemGraph,
    SearchParams,
    beam_search,
    build_index,
    robust_prune,
)
from .report import BatchReport, PruneCounters
from .updates import (
    BatchSpec,
    DeltaG,
    LocalizedEngine,
    UpdateParams,
    asnr_repair,
    run_batch,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineEngine",
    "BaselineParams",
    "BatchReport",
    "BatchSpec",
    "BuildParams",
    "DeltaG",
    "DiskIndex",
    "FormatError",
    "IndexReader",
    "LocalizedEngine",
    "MemGraph",
    "PruneCounters",
    "QuerySet",
    "SearchParams",
    "StorageError",
    "StreamAnnError",
    "UpdateParams",
    "UsageError",
    "VectorDataset",
    "asnr_repair",
    "beam_search",
    "brute_force_knn",
    "build_index",
    "create_index",
    "distance",
    "load_vectors",
    "recall_at_k",
    "robust_prune",
    "run_batch",
    "run_batch_baseline",
]
