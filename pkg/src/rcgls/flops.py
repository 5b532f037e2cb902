"""Multiply-add accounting shared by the engines and the benchmark harness.

One unit is one multiply-add pair (or one lone multiply / add).  Sketched
products count ``sum_{j in J} nnz(A[:, j])``; vector updates count their
length, so full-dimension updates cost ``n`` or ``d`` and support-restricted
updates cost the support size.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


class FlopCounter:
    __slots__ = ("total",)

    def __init__(self, total: int = 0):
        self.total = total

    def add(self, n) -> None:
        if n < 0:
            raise ValueError("flop increments must be nonnegative")
        self.total += int(n)

    def __repr__(self):
        return f"FlopCounter({self.total})"


class _NullCounter(FlopCounter):
    def add(self, n) -> None:
        pass


NULL_COUNTER = _NullCounter()


def count_flops(events: Iterable[int]) -> np.ndarray:
    """Cumulative counter over a stream of per-event increments."""
    counter = FlopCounter()
    out = []
    for e in events:
        counter.add(e)
        out.append(counter.total)
    return np.array(out, dtype=np.int64)
