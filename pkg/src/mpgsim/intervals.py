"""Canonical sets of disjoint half-open integer intervals.

An :class:`IntervalSet` is immutable and always normalized: intervals are
sorted, pairwise disjoint, non-empty, and adjacent intervals are merged.
"""
from __future__ import annotations

import bisect
import itertools
from functools import cached_property
from typing import Iterable, Iterator


class IntervalSet:
    __slots__ = ("_iv", "__dict__")

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        self._iv: tuple[tuple[int, int], ...] = self._normalize(intervals)

    @staticmethod
    def _normalize(intervals: Iterable[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
        items = sorted((int(a), int(b)) for a, b in intervals if b > a)
        out: list[list[int]] = []
        for a, b in items:
            if out and a <= out[-1][1]:
                if b > out[-1][1]:
                    out[-1][1] = b
            else:
                out.append([a, b])
        return tuple((a, b) for a, b in out)

    @classmethod
    def _trusted(cls, normalized: tuple[tuple[int, int], ...]) -> "IntervalSet":
        obj = cls.__new__(cls)
        obj._iv = normalized
        return obj

    @classmethod
    def span(cls, start: int, end: int) -> "IntervalSet":
        return cls([(start, end)])

    # container protocol

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._iv == other._iv

    def __hash__(self) -> int:
        return hash(self._iv)

    def __repr__(self) -> str:
        return f"IntervalSet({list(self._iv)})"

    def __contains__(self, t: int) -> bool:
        i = bisect.bisect_right(self._starts, t) - 1
        return i >= 0 and t < self._iv[i][1]

    @property
    def intervals(self) -> tuple[tuple[int, int], ...]:
        return self._iv

    @cached_property
    def _starts(self) -> list[int]:
        return [a for a, _ in self._iv]

    @cached_property
    def _cum(self) -> list[int]:
        # _cum[i] = total length of the first i intervals
        return [0, *itertools.accumulate(b - a for a, b in self._iv)]

    # measures

    def measure(self) -> int:
        return self._cum[-1]

    def measure_within(self, start: int, end: int) -> int:
        """Length of ``self ∩ [start, end)`` in O(log n)."""
        if end <= start or not self._iv:
            return 0
        return self._prefix(end) - self._prefix(start)

    def _prefix(self, t: int) -> int:
        # total measure of self ∩ (-inf, t)
        i = bisect.bisect_right(self._starts, t) - 1
        if i < 0:
            return 0
        a, b = self._iv[i]
        return self._cum[i] + (min(t, b) - a)

    # algebra

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(itertools.chain(self._iv, other._iv))

    def intersection(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        i = j = 0
        x, y = self._iv, other._iv
        while i < len(x) and j < len(y):
            a = max(x[i][0], y[j][0])
            b = min(x[i][1], y[j][1])
            if a < b:
                out.append((a, b))
            if x[i][1] < y[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet._trusted(tuple(out))

    def difference(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        y = other._iv
        j = 0
        for a, b in self._iv:
            cur = a
            while j < len(y) and y[j][1] <= cur:
                j += 1
            k = j
            while k < len(y) and y[k][0] < b:
                if y[k][0] > cur:
                    out.append((cur, y[k][0]))
                cur = max(cur, y[k][1])
                if cur >= b:
                    break
                k += 1
            if cur < b:
                out.append((cur, b))
        return IntervalSet._trusted(tuple(out))

    def clip(self, start: int, end: int) -> "IntervalSet":
        return self.intersection(IntervalSet.span(start, end))

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    @staticmethod
    def intersect_all(sets: Iterable["IntervalSet"]) -> "IntervalSet":
        sets = list(sets)
        if not sets:
            return IntervalSet()
        acc = sets[0]
        for s in sets[1:]:
            acc = acc & s
            if not acc:
                break
        return acc

    @staticmethod
    def union_all(sets: Iterable["IntervalSet"]) -> "IntervalSet":
        return IntervalSet(itertools.chain.from_iterable(s._iv for s in sets))


def periodic_on_measure(t0: int, period: int, on: int, count: int, start: int, end: int) -> int:
    """Measure of ``[start, end) ∩ ⋃_{i<count} [t0 + i*period, t0 + i*period + on)``.

    Requires ``0 <= on <= period`` and ``period > 0``.
    """
    if count <= 0 or on <= 0 or end <= start:
        return 0

    def upto(x: int) -> int:
        if x <= t0:
            return 0
        q, r = divmod(x - t0, period)
        if q >= count:
            return count * on
        return q * on + min(r, on)

    return upto(end) - upto(start)
