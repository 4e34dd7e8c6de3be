"""Per-batch metrics shared by both update engines."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

from .diskindex.pageio import IoCounters

REPORT_SCHEMA = 1


@dataclass
class PruneCounters:
    delete_affected: int = 0
    delete_prunes: int = 0
    patch_vertices: int = 0
    patch_prunes: int = 0

    def __add__(self, other: PruneCounters) -> PruneCounters:
        return PruneCounters(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def __sub__(self, other: PruneCounters) -> PruneCounters:
        return PruneCounters(**{f.name: getattr(self, f.name) - getattr(other, f.name) for f in fields(self)})

    def copy(self) -> PruneCounters:
        return PruneCounters(**asdict(self))


@dataclass(frozen=True)
class RepairRecord:
    """Outcome of repairing one vertex that lost neighbors to deletion."""

    vertex: int
    lost: int
    pre_degree: int
    post_degree: int
    pruned: bool
    replaced: bool  # took the replacement path (fewer losses than the threshold)


@dataclass
class BatchReport:
    batch_index: int = 0
    engine: str = ""
    deletes: int = 0
    inserts: int = 0
    wall_seconds: float = 0.0
    updates_per_second: float = 0.0
    io: IoCounters = field(default_factory=IoCounters)
    io_by_phase: dict[str, IoCounters] = field(default_factory=dict)
    prunes: PruneCounters = field(default_factory=PruneCounters)
    phase_seconds: dict[str, float] = field(default_factory=dict)
    topology_sync_seconds: float = 0.0
    lost_histogram: dict[int, int] = field(default_factory=dict)
    recall_at_k: float | None = None
    k: int = 10
    tail_latency_us: dict[str, float] | None = None
    repairs: list[RepairRecord] | None = field(default=None, repr=False)

    def maintenance_io(self, exclude: tuple[str, ...] = ("insert",)) -> IoCounters:
        """I/O charged to every phase except ``exclude`` (insertion by default)."""
        total = IoCounters()
        for name, io in self.io_by_phase.items():
            if name not in exclude:
                total = total + io
        return total

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "batch": self.batch_index,
            "engine": self.engine,
            "deletes": self.deletes,
            "inserts": self.inserts,
            "wall_seconds": self.wall_seconds,
            "updates_per_second": self.updates_per_second,
            "io": self.io.as_dict(),
            "io_by_phase": {k: v.as_dict() for k, v in sorted(self.io_by_phase.items())},
            "prunes": asdict(self.prunes),
            "phase_seconds": self.phase_seconds,
            "topology_sync_seconds": self.topology_sync_seconds,
            "lost_histogram": {str(k): v for k, v in sorted(self.lost_histogram.items())},
            "recall_at_k": self.recall_at_k,
            "k": self.k,
            "tail_latency_us": self.tail_latency_us,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def lost_histogram(affected: dict[int, set[int]]) -> dict[int, int]:
    return dict(Counter(len(d) for d in affected.values()))
