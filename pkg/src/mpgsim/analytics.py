"""Segmentation, time series, paired-scenario verdicts and mix-shift detection.

Aggregates are always formed by summing numerators and denominators, never
by averaging ratios. Worked example: segment A has pg 0.8 on 10 chip-s of
on-duty time, segment B pg 0.2 on 90 chip-s. The fleet pg is
(8 + 18) / (10 + 90) = 0.26, not the mean of ratios 0.5.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from mpgsim.errors import InvalidComparisonError
from mpgsim.goodput import FLEET, WORKLOAD, GoodputReport, Scope, Window, goodput_report, ledger
from mpgsim.trace import Trace

DIMENSIONS = ("chip_kind", "generation_tag", "size_class", "phase", "framework_tag", "runtime_tag")
DEAD_BAND = 1e-6
METRICS = ("pg", "rg", "sg", "mpg")


def sign(x: float, dead_band: float = DEAD_BAND) -> int:
    if abs(x) <= dead_band:
        return 0
    return 1 if x > 0 else -1


_SIZE_ORDER = {"small": 0, "medium": 1, "large": 2, "xl": 3}


def segment_values(trace: Trace, dimension: str) -> list[str]:
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown segment dimension {dimension!r}; choose from {', '.join(DIMENSIONS)}")
    values = {m.dimension(dimension) for m in trace.jobs.values()}
    if dimension == "size_class":
        return sorted(values, key=lambda v: _SIZE_ORDER.get(v, 99))
    return sorted(values)


def segment_report(trace: Trace, window: Window | None = None, dimension: str = "phase") -> list[GoodputReport]:
    """One report per observed value of ``dimension``; empty segments are omitted."""
    out = []
    for value in segment_values(trace, dimension):
        rep = goodput_report(trace, window, Scope.segment(dimension, value))
        if rep.sg_den == 0 and rep.sg_num == 0:
            continue
        out.append(rep)
    return out


def timeseries(trace: Trace, bucket: int, scope: Scope = FLEET) -> list[GoodputReport]:
    """Reports over contiguous buckets of ``bucket`` µs tiling ``[0, horizon)``."""
    if bucket <= 0:
        raise ValueError("bucket width must be > 0")
    return [goodput_report(trace, (a, min(a + bucket, trace.horizon)), scope)
            for a in range(0, trace.horizon, bucket)]


# ---------- paired comparisons ----------

_ROWS: dict[str, dict[str, Any]] = {
    "compiler": {
        "label": "compiler change shortens device step time",
        "paths": [r"passes(\[\d+\].*)?", r"jobs\[\d+\]\.profile\.(device_compute_time|comm_time|overlap_fraction)"],
    },
    "runtime": {
        "label": "runtime change cuts startup and checkpoint losses",
        "paths": [r"jobs\[\d+\]\.runtime\..*", r"runtime_presets(\..*)?", r"jobs\[\d+\]\.profile\.host_time",
                  r"failures\..*"],
    },
    "scheduler": {
        "label": "scheduler change cuts time spent with only some tasks up",
        "paths": [r"scheduler\..*", r"jobs\[\d+\]\.(priority|cell)"],
    },
}
FACTORS = tuple(_ROWS)

EXPECTED = {
    ("compiler", "device-bound"): {"pg": 1, "rg": -1, "sg": -1, "mpg": 1},
    ("compiler", "host-bound"): {"pg": 1, "rg": -1, "sg": 0, "mpg": 0},
    ("runtime", None): {"pg": 0, "rg": 1, "sg": -1, "mpg": 1},
    ("scheduler", None): {"pg": 0, "rg": 0, "sg": 1, "mpg": 1},
}


def document_diff(a: Any, b: Any, path: str = "") -> list[str]:
    """Leaf paths (``jobs[0].runtime.init_time`` style) where two documents differ."""
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            sub = f"{path}.{k}" if path else str(k)
            if k not in a or k not in b:
                out.append(sub)
            else:
                out.extend(document_diff(a[k], b[k], sub))
        return out
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return [path]
        out = []
        for i, (x, y) in enumerate(zip(a, b)):
            out.extend(document_diff(x, y, f"{path}[{i}]"))
        return out
    return [] if a == b else [path]


def boundedness_context(*traces: Trace) -> str:
    """device-bound / host-bound if every executed step agrees, else mixed."""
    kinds = set()
    for tr in traces:
        for led in ledger(tr).values():
            for s in led.segments:
                kinds.add("device-bound" if s.on >= s.wall else "host-bound")
    return kinds.pop() if len(kinds) == 1 else "mixed"


@dataclass(frozen=True)
class ComparisonVerdict:
    factor: str
    row: str
    context: str
    before: Mapping[str, float | None]
    after: Mapping[str, float | None]
    deltas: Mapping[str, float | None]
    signs: Mapping[str, int | None]
    expected: Mapping[str, int] | None
    matched: bool
    dead_band: float = DEAD_BAND

    def lines(self) -> list[str]:
        out = [f"factor={self.factor}", f"row={self.row}", f"context={self.context}"]
        for m in METRICS:
            exp = "" if self.expected is None else f" expected={self.expected[m]:+d}"
            d = self.deltas[m]
            s = self.signs[m]
            out.append(f"{m}: before={self.before[m]!r} after={self.after[m]!r} delta={d!r} "
                       f"sign={'?' if s is None else f'{s:+d}'}{exp}")
        out.append(f"matched={'yes' if self.matched else 'no'}")
        return out


def compare_scenarios(trace_a: Trace, trace_b: Trace, factor: str, dead_band: float = DEAD_BAND,
                      scope: Scope = WORKLOAD) -> ComparisonVerdict:
    """Signs of b - a for each metric, checked against the expected row.

    Metrics are taken at workload scope (all jobs, demanded chip-time as the
    SG denominator) over the full horizon.
    """
    if factor not in _ROWS:
        raise ValueError(f"unknown factor {factor!r}; choose from {', '.join(FACTORS)}")
    allowed = [re.compile(p) for p in _ROWS[factor]["paths"]]
    diff = document_diff(trace_a.header.scenario, trace_b.header.scenario)
    stray = [p for p in diff if not any(rx.fullmatch(p) for rx in allowed)]
    if stray:
        raise InvalidComparisonError(f"scenarios differ outside factor {factor!r}: {', '.join(stray[:8])}")

    ra = goodput_report(trace_a, None, scope)
    rb = goodput_report(trace_b, None, scope)
    before = {m: getattr(ra, m) for m in METRICS}
    after = {m: getattr(rb, m) for m in METRICS}
    deltas, signs = {}, {}
    for m in METRICS:
        if before[m] is None or after[m] is None:
            deltas[m] = signs[m] = None
        else:
            deltas[m] = after[m] - before[m]
            signs[m] = sign(deltas[m], dead_band)
    context = boundedness_context(trace_a, trace_b)
    if factor == "compiler":
        expected = EXPECTED.get((factor, context))
    else:
        expected = EXPECTED[(factor, None)]
    matched = expected is not None and all(signs[m] == expected[m] for m in METRICS)
    return ComparisonVerdict(factor, _ROWS[factor]["label"], context, before, after, deltas, signs,
                             expected, matched, dead_band)


# ---------- Simpson's paradox ----------

_TERMS = {"pg": ("pg_num", "pg_den"), "rg": ("rg_num", "rg_den"), "sg": ("sg_num", "sg_den")}


@dataclass(frozen=True)
class SegmentEvidence:
    segment: str
    weight_before: float
    weight_after: float
    value_before: float
    value_after: float
    sign: int


@dataclass(frozen=True)
class SimpsonResult:
    flag: bool
    metric: str
    aggregate_before: float | None
    aggregate_after: float | None
    aggregate_sign: int | None
    evidence: tuple[SegmentEvidence, ...] = ()


def simpson_check(before: Sequence[GoodputReport], after: Sequence[GoodputReport], metric: str = "pg",
                  dead_band: float = DEAD_BAND) -> SimpsonResult:
    """Flag a mix-shift reversal between two sets of segment reports.

    Fires when at least two segments all trend the same (non-zero) way while
    the numerator/denominator aggregate trends differently. Weights are each
    segment's share of the metric's denominator.
    """
    num_f, den_f = _TERMS[metric]
    a = {r.scope: r for r in before if getattr(r, den_f) > 0}
    b = {r.scope: r for r in after if getattr(r, den_f) > 0}
    common = sorted(set(a) & set(b))
    if not common:
        return SimpsonResult(False, metric, None, None, None)

    def agg(reps):
        den = sum(getattr(r, den_f) for r in reps)
        return sum(getattr(r, num_f) for r in reps) / den, den

    agg_a, den_a = agg([a[s] for s in common])
    agg_b, den_b = agg([b[s] for s in common])
    agg_sign = sign(agg_b - agg_a, dead_band)
    evidence = []
    for s in common:
        va = getattr(a[s], num_f) / getattr(a[s], den_f)
        vb = getattr(b[s], num_f) / getattr(b[s], den_f)
        evidence.append(SegmentEvidence(s, getattr(a[s], den_f) / den_a, getattr(b[s], den_f) / den_b,
                                        va, vb, sign(vb - va, dead_band)))
    seg_signs = {e.sign for e in evidence}
    flag = len(evidence) >= 2 and len(seg_signs) == 1 and 0 not in seg_signs and agg_sign not in seg_signs
    return SimpsonResult(flag, metric, agg_a, agg_b, agg_sign, tuple(evidence))
