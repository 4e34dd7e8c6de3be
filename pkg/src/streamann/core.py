"""Vector storage, distance kernels, TEXMEX file I/O and the recall metric."""

from __future__ import annotations

import os
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import FormatError, UsageError

ID_DTYPE = np.uint32
MAX_ID = 0xFFFFFFFE  # 0xFFFFFFFF marks an empty neighbor slot on disk


@dataclass(frozen=True)
class VectorDataset:
    """Dense float32 vectors with stable external ids.

    ``data`` is a C-contiguous ``(count, dim)`` float32 array and ``ids`` a
    parallel uint32 array. Row ``i`` holds the vector of ``ids[i]``.
    """

    data: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] < 1:
            raise UsageError(f"expected a (count, dim) array with dim >= 1, got shape {data.shape}")
        ids = self.ids
        if ids is None:
            ids = np.arange(data.shape[0], dtype=ID_DTYPE)
        ids = np.asarray(ids)
        if ids.shape != (data.shape[0],):
            raise UsageError("ids must have one entry per vector")
        if ids.size and (ids.min() < 0 or ids.max() > MAX_ID):
            raise UsageError("ids must fit in 32 bits and stay below 0xFFFFFFFF")
        ids = ids.astype(ID_DTYPE)
        if np.unique(ids).size != ids.size:
            raise UsageError("ids must be unique")
        data.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def count(self) -> int:
        return int(self.data.shape[0])

    def __len__(self) -> int:
        return self.count

    def subset(self, rows: np.ndarray) -> VectorDataset:
        rows = np.asarray(rows, dtype=np.int64)
        return VectorDataset(self.data[rows], self.ids[rows])


@dataclass
class QuerySet:
    queries: np.ndarray
    ground_truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.queries = np.ascontiguousarray(self.queries, dtype=np.float32)
        if self.queries.ndim != 2:
            raise UsageError("queries must be a 2-d array")
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth)
            if gt.ndim != 2 or gt.shape[0] != self.queries.shape[0]:
                raise UsageError("ground truth needs one row of k ids per query")
            self.ground_truth = gt.astype(np.int64)

    @property
    def dim(self) -> int:
        return int(self.queries.shape[1])

    def __len__(self) -> int:
        return int(self.queries.shape[0])


def _as_vec(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32).reshape(-1)


def distance(a, b) -> float:
    """Squared Euclidean distance, accumulated in float64."""
    a = _as_vec(a)
    b = _as_vec(b)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(_kernels.sqdist(a, b))


def distances(q, mat) -> np.ndarray:
    """Distances from ``q`` to every row of ``mat`` (same kernel as ``distance``)."""
    q = _as_vec(q)
    mat = np.ascontiguousarray(mat, dtype=np.float32)
    if mat.ndim != 2 or mat.shape[1] != q.size:
        raise UsageError(f"dimension mismatch: query has {q.size}, matrix has shape {mat.shape}")
    return _kernels.sqdist_many(q, mat)


def order_by_distance(dist: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Permutation sorting by (distance, id) ascending."""
    return np.lexsort((np.asarray(ids), np.asarray(dist)))


# --- TEXMEX files -----------------------------------------------------------

_SCALAR = {"fvecs": np.dtype("<f4"), "bvecs": np.dtype("u1"), "ivecs": np.dtype("<i4")}


def _format_of(path: Path, fmt: str | None) -> str:
    fmt = fmt or path.suffix.lstrip(".")
    if fmt not in _SCALAR:
        raise UsageError(f"unknown vector format {fmt!r}; expected one of {sorted(_SCALAR)}")
    return fmt


def _read_records(path: Path, fmt: str) -> np.ndarray:
    scalar = _SCALAR[fmt]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise FormatError(f"{path}: empty file")
    if raw.size < 4:
        raise FormatError(f"{path}: truncated header")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise FormatError(f"{path}: non-positive dimension {d}")
    stride = 4 + d * scalar.itemsize
    if raw.size % stride:
        # Either a truncated tail or a record with a different dimension.
        _locate_bad_record(raw, d, scalar.itemsize, path)
        raise FormatError(f"{path}: truncated record")
    n = raw.size // stride
    rows = raw.reshape(n, stride)
    dims = rows[:, :4].copy().view("<i4").reshape(n)
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise FormatError(f"{path}: record {bad[0]} declares d={dims[bad[0]]}, expected {d}")
    return rows[:, 4:].copy().view(scalar).reshape(n, d)


def _locate_bad_record(raw: np.ndarray, d: int, itemsize: int, path: Path) -> None:
    off = 0
    idx = 0
    while off + 4 <= raw.size:
        di = int(raw[off : off + 4].view("<i4")[0])
        if di != d:
            raise FormatError(f"{path}: record {idx} declares d={di}, expected {d}")
        off += 4 + d * itemsize
        idx += 1
    if off != raw.size:
        raise FormatError(f"{path}: truncated record {idx}")


def load_vectors(path: str | os.PathLike, fmt: str | None = None) -> VectorDataset:
    """Read an ``fvecs`` or ``bvecs`` file; ids are assigned in file order."""
    path = Path(path)
    fmt = _format_of(path, fmt)
    if fmt == "ivecs":
        raise UsageError("ivecs holds ids, use read_ivecs")
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    return VectorDataset(_read_records(path, fmt).astype(np.float32))


def write_vectors(path: str | os.PathLike, data: np.ndarray, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _format_of(path, fmt)
    scalar = _SCALAR[fmt]
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise UsageError("expected a 2-d array")
    if fmt == "bvecs" and (arr.min(initial=0) < 0 or arr.max(initial=0) > 255):
        raise UsageError("bvecs values must lie in [0, 255]")
    n, d = arr.shape
    out = np.empty((n, 4 + d * scalar.itemsize), np.uint8)
    out[:, :4] = np.full((n, 1), d, "<i4").view(np.uint8)
    out[:, 4:] = np.ascontiguousarray(arr.astype(scalar)).view(np.uint8).reshape(n, -1)
    out.tofile(path)


def read_ivecs(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    return _read_records(path, "ivecs").astype(np.int64)


def write_ivecs(path: str | os.PathLike, rows: np.ndarray) -> None:
    write_vectors(path, np.asarray(rows, dtype=np.int64), "ivecs")


# --- metric and exact search ------------------------------------------------


def recall_at_k(result: Iterable[int], truth: Iterable[int], k: int) -> float:
    truth_set = set(int(t) for t in truth)
    result_set = set(int(r) for r in result)
    if k < 1:
        raise UsageError("k must be positive")
    if len(truth_set) != k:
        raise UsageError(f"truth must hold exactly k={k} ids, got {len(truth_set)}")
    if len(result_set) > k:
        raise UsageError(f"result holds more than k={k} ids")
    return len(result_set & truth_set) / k


def brute_force_knn(dataset: VectorDataset, query, k: int, excluded: Iterable[int] = ()) -> list[int]:
    """Exact k nearest ids by (distance, id), never returning ``excluded``."""
    q = _as_vec(query)
    if q.size != dataset.dim:
        raise UsageError(f"dimension mismatch: query has {q.size}, dataset has {dataset.dim}")
    keep = np.ones(dataset.count, bool)
    excluded = np.fromiter((int(e) for e in excluded), np.int64)
    if excluded.size:
        keep &= ~np.isin(dataset.ids.astype(np.int64), excluded)
    n_avail = int(keep.sum())
    if k < 1 or k > n_avail:
        raise UsageError(f"k={k} outside [1, {n_avail}]")
    ids = dataset.ids[keep].astype(np.int64)
    dist = _kernels.sqdist_many(q, dataset.data[keep] if not keep.all() else dataset.data)
    return ids[order_by_distance(dist, ids)[:k]].tolist()


def knn_many(data: np.ndarray, ids: np.ndarray, queries: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Exact k-NN for many queries.

    A float64 matrix product shortlists candidates, and the shortlist is
    re-ranked with the scalar kernel so results (including ties) match
    ``brute_force_knn`` exactly.
    """
    data = np.ascontiguousarray(data, dtype=np.float32)
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    ids = np.asarray(ids, dtype=np.int64)
    n = data.shape[0]
    if k < 1 or k > n:
        raise UsageError(f"k={k} outside [1, {n}]")
    x64 = data.astype(np.float64)
    xsq = np.einsum("ij,ij->i", x64, x64)
    out = np.empty((queries.shape[0], k), np.int64)
    for s in range(0, queries.shape[0], chunk):
        q64 = queries[s : s + chunk].astype(np.float64)
        qsq = np.einsum("ij,ij->i", q64, q64)
        approx = qsq[:, None] + xsq[None, :] - 2.0 * (q64 @ x64.T)
        # Generous bound on the cancellation error of the expanded form.
        slack = 1e-9 * (qsq[:, None] + xsq.max()) + 1e-9
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1 : k]
        for r in range(q64.shape[0]):
            cand = np.flatnonzero(approx[r] <= kth[r, 0] + 2 * slack[r, 0])
            exact = _kernels.sqdist_many(queries[s + r], data[cand])
            cid = ids[cand]
            out[s + r] = cid[order_by_distance(exact, cid)[:k]]
    return out
