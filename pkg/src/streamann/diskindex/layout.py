"""Byte layout of the query index and the topology file."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError

PAGE_SIZE = 4096
FORMAT_VERSION = 1
FREE = np.uint32(0xFFFFFFFF)
TOPO_HEADER_WORDS = 3  # owner id, degree, sync epoch


@dataclass(frozen=True)
class PageLayout:
    """Fixed-size node records packed into fixed-size pages, never straddling one."""

    dim: int
    r_prime: int
    page_size: int = PAGE_SIZE

    def __post_init__(self) -> None:
        if self.dim < 1 or self.r_prime < 1:
            raise UsageError("dimension and neighbor capacity must be positive")
        if self.page_size % 4:
            raise UsageError("page size must be a multiple of 4 bytes")
        if self.record_size > self.page_size:
            raise UsageError(
                f"a {self.record_size}-byte record does not fit a {self.page_size}-byte page "
                f"(dim={self.dim}, capacity={self.r_prime})"
            )

    @property
    def record_size(self) -> int:
        return 4 * self.dim + 4 + 4 * self.r_prime

    @property
    def nodes_per_page(self) -> int:
        return self.page_size // self.record_size

    @property
    def padding(self) -> int:
        return self.page_size - self.nodes_per_page * self.record_size

    @property
    def rec_words(self) -> int:
        return self.record_size // 4

    @property
    def page_words(self) -> int:
        return self.page_size // 4

    @property
    def topo_record_size(self) -> int:
        return 4 * (TOPO_HEADER_WORDS + self.r_prime)

    def record_dtype(self) -> np.dtype:
        return np.dtype([("vec", "<f4", (self.dim,)), ("deg", "<u4"), ("nbr", "<u4", (self.r_prime,))])

    def page_dtype(self) -> np.dtype:
        fields = [("rec", self.record_dtype(), (self.nodes_per_page,))]
        if self.padding:
            fields.append(("pad", "u1", (self.padding,)))
        return np.dtype(fields)

    def topo_dtype(self) -> np.dtype:
        return np.dtype([("owner", "<u4"), ("deg", "<u4"), ("epoch", "<u4"), ("nbr", "<u4", (self.r_prime,))])

    def locate(self, gslot: int) -> tuple[int, int]:
        return divmod(int(gslot), self.nodes_per_page)

    def expected_topology_ratio(self) -> float:
        return 4 * self.r_prime / self.record_size

    def empty_pages(self, count: int) -> np.ndarray:
        pages = np.zeros(count, self.page_dtype())
        pages["rec"]["nbr"] = FREE
        return pages
