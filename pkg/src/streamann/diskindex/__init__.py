"""Persistent page-aligned index storage."""

from .index import AuditReport, DiskIndex, PageBuffer
from .layout import FORMAT_VERSION, PAGE_SIZE, PageLayout
from .pageio import IoCounters, IoLedger, PageFile
from .reader import IndexReader

create_index = DiskIndex.create

__all__ = [
    "FORMAT_VERSION",
    "PAGE_SIZE",
    "AuditReport",
    "DiskIndex",
    "IndexReader",
    "IoCounters",
    "IoLedger",
    "PageBuffer",
    "PageFile",
    "PageLayout",
    "create_index",
]
