"""
Multiply-accumulate accounting.

Kernels call `record_macs(kind, n)` with their closed-form MAC count; the
numbers only land somewhere while a `count_macs()` block is active.

Usage:
    with count_macs() as counter:
        model(x)
    counter.total, counter.by_kind["attention"], counter.calls["attention"]
"""

from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Optional


@dataclass
class MacCounter:
    by_kind: Counter = field(default_factory=Counter)
    calls: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return int(sum(self.by_kind.values()))

    def add(self, kind: str, macs: int, calls: int = 1) -> None:
        self.by_kind[kind] += int(macs)
        self.calls[kind] += int(calls)


_ACTIVE: ContextVar[Optional[MacCounter]] = ContextVar("hdsw_mac_counter", default=None)


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    token = _ACTIVE.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)


def record_macs(kind: str, macs: int, calls: int = 1) -> None:
    counter = _ACTIVE.get()
    if counter is not None:
        counter.add(kind, macs, calls)
