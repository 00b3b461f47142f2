"""Scheduling, Runtime and Program Goodput (and their product, MPG) from a trace.

Accounting, all in chip-time over an analysis window:

* SG = all-allocated chip-time / capacity. A job is all-allocated while every
  one of its tasks is up. Fleet scope divides by fleet capacity; segment, job
  and workload scopes divide by demanded chip-time (chips x the span from
  submission to completion).
* RG = committed on-duty chip-time / all-allocated chip-time. On-duty time is
  the device path of each step (compute plus exposed communication); host
  stalls, init, restore, checkpoint writes, shard barriers and lost steps are
  all off-duty.
* PG = ideal roofline chip-time / committed on-duty chip-time.

So sg * rg * pg telescopes to ideal chip-time over the scope's denominator.
A committed step's chip-time lands in whichever window holds its execution,
prorated to the microsecond.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from mpgsim.errors import TraceCorruptError, UndefinedMetricError
from mpgsim.fleet import US_PER_S, fleet_capacity
from mpgsim.intervals import IntervalSet, periodic_on_measure
from mpgsim.trace import Event, JobMeta, Trace

Window = tuple[int, int]

CSV_COLUMNS = ("scope", "window", "sg_num", "sg_den", "sg", "rg_num", "rg_den", "rg",
               "pg_num", "pg_den", "pg", "mpg", "flags")


@dataclass(frozen=True)
class Scope:
    kind: str = "fleet"  # fleet | workload | segment | job
    dimension: str = ""
    value: str = ""

    @property
    def label(self) -> str:
        if self.kind == "segment":
            return f"{self.dimension}={self.value}"
        if self.kind == "job":
            return f"job={self.value}"
        return self.kind

    def includes(self, meta: JobMeta) -> bool:
        if self.kind == "segment":
            return meta.dimension(self.dimension) == self.value
        if self.kind == "job":
            return meta.job_id == self.value
        return True

    @classmethod
    def segment(cls, dimension: str, value: str) -> "Scope":
        return cls("segment", dimension, value)

    @classmethod
    def job(cls, job_id: str) -> "Scope":
        return cls("job", "", job_id)


FLEET = Scope("fleet")
WORKLOAD = Scope("workload")


# ---------- all-allocated intervals ----------

def all_allocated_intervals(events: Iterable[Event], until: int, n_tasks: int | None = None) -> IntervalSet:
    """Intersection of every task's up-time for one job incarnation.

    Tasks still up at the end of the events are closed at ``until``. The task
    count comes from ``n_tasks``, else a ``tasks_allocated`` event, else the
    highest task index seen.
    """
    up_since: dict[int, int] = {}
    spans: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for e in events:
        if e.kind == "tasks_allocated" and n_tasks is None:
            n_tasks = int(e.get("tasks"))
        elif e.kind == "task_up":
            task = int(e.get("task"))
            if task in up_since:
                raise TraceCorruptError(f"task {task} of {e.job} up twice", seq=e.seq)
            up_since[task] = e.t
        elif e.kind == "task_down":
            task = int(e.get("task"))
            if task not in up_since:
                raise TraceCorruptError(f"task {task} of {e.job} down while not up", seq=e.seq)
            spans[task].append((up_since.pop(task), e.t))
    for task, start in up_since.items():
        spans[task].append((start, max(start, until)))
    if n_tasks is None:
        n_tasks = max(spans, default=-1) + 1
    if n_tasks == 0:
        return IntervalSet()
    return IntervalSet.intersect_all(IntervalSet(spans.get(task, ())) for task in range(n_tasks))


# ---------- per-trace ledger ----------

@dataclass
class _Segment:
    """A run of executed steps; only the first ``committed`` of them count."""
    t0: int
    wall: int
    on: int
    n: int
    committed: int
    ideal: float


@dataclass
class JobLedger:
    meta: JobMeta
    all_up: IntervalSet = field(default_factory=IntervalSet)
    task_up: list[tuple[int, IntervalSet]] = field(default_factory=list)  # (chips, up-time)
    demand: IntervalSet = field(default_factory=IntervalSet)
    segments: list[_Segment] = field(default_factory=list)
    ckpt_writes: IntervalSet = field(default_factory=IntervalSet)

    @property
    def chips(self) -> int:
        return self.meta.chips

    def all_up_us(self, w: Window) -> int:
        return self.all_up.measure_within(*w)

    def committed_on_us(self, w: Window) -> int:
        return sum(periodic_on_measure(s.t0, s.wall, s.on, s.committed, *w) for s in self.segments)

    def ideal_chip_s(self, w: Window) -> float:
        total = 0.0
        for s in self.segments:
            if s.on > 0 and s.committed > 0:
                part = periodic_on_measure(s.t0, s.wall, s.on, s.committed, *w)
                total += s.ideal * part / s.on
        return total * self.chips

    def occupied_chip_us(self, w: Window) -> int:
        return sum(chips * up.measure_within(*w) for chips, up in self.task_up)

    def busy_us(self, w: Window) -> int:
        stepping = IntervalSet((s.t0, s.t0 + s.n * s.wall) for s in self.segments)
        return (stepping | self.ckpt_writes).measure_within(*w)


def _build_job_ledger(meta: JobMeta, events: Sequence[Event], horizon: int) -> JobLedger:
    led = JobLedger(meta)
    by_inc: dict[int, list[Event]] = defaultdict(list)
    commit_bound: dict[int, int] = defaultdict(int)
    submitted = end = None
    pending_write = None
    writes = []
    step_records = []
    for e in events:
        inc = e.get("inc")
        if inc is not None:
            by_inc[inc].append(e)
        if e.kind == "job_submitted":
            submitted = e.t
        elif e.kind in ("job_completed", "unschedulable"):
            end = e.t
            if e.kind == "job_completed":
                commit_bound[inc] = max(commit_bound[inc], int(e.get("committed")))
        elif e.kind == "checkpoint_committed":
            commit_bound[inc] = max(commit_bound[inc], int(e.get("committed")))
            if pending_write is not None:
                writes.append((pending_write, e.t))
                pending_write = None
        elif e.kind == "checkpoint_begin":
            pending_write = e.t if e.get("mode") == "sync" else None
        elif e.kind in ("failure", "preemption"):
            pending_write = None
        elif e.kind == "step_committed":
            step_records.append(e)
    if submitted is not None:
        led.demand = IntervalSet.span(submitted, horizon if end is None else end)
    led.ckpt_writes = IntervalSet(writes)

    ups = []
    for inc, evs in sorted(by_inc.items()):
        ups.append(all_allocated_intervals(evs, horizon))
        open_at: dict[int, tuple[int, int]] = {}
        per_task: dict[int, list[tuple[int, int]]] = defaultdict(list)
        chips_of: dict[int, int] = {}
        for e in evs:
            if e.kind == "task_up":
                open_at[e.get("task")] = e.t
                chips_of[e.get("task")] = e.chips
            elif e.kind == "task_down":
                per_task[e.get("task")].append((open_at.pop(e.get("task")), e.t))
        for task, start in open_at.items():
            per_task[task].append((start, horizon))
        for task, spans in sorted(per_task.items()):
            led.task_up.append((chips_of[task], IntervalSet(spans)))
    led.all_up = IntervalSet.union_all(ups)

    for e in step_records:
        n = int(e.get("n"))
        first = int(e.get("first"))
        if e.get("commit") == "continuous":
            committed = n
        else:
            committed = max(0, min(n, commit_bound[e.get("inc")] - first))
        led.segments.append(_Segment(int(e.get("t0")), int(e.get("wall")), int(e.get("on")), n, committed,
                                     float(e.get("ideal"))))
    return led


def ledger(trace: Trace) -> dict[str, JobLedger]:
    cached = trace.__dict__.get("_ledger")
    if cached is None:
        grouped: dict[str, list[Event]] = defaultdict(list)
        for e in trace.events:
            grouped[e.job].append(e)
        unknown = set(grouped) - set(trace.jobs)
        if unknown:
            raise TraceCorruptError(f"events for undeclared jobs {sorted(unknown)}")
        cached = {jid: _build_job_ledger(meta, grouped.get(jid, ()), trace.horizon)
                  for jid, meta in trace.jobs.items()}
        object.__setattr__(trace, "_ledger", cached)
    return cached


# ---------- metrics ----------

def _window(trace: Trace, window: Window | None) -> Window:
    if window is None:
        return (0, trace.horizon)
    a, b = window
    if b < a:
        raise ValueError("window end precedes start")
    return (a, b)


def _in_scope(trace: Trace, scope: Scope) -> list[JobLedger]:
    return [led for led in ledger(trace).values() if scope.includes(led.meta)]


def _ratio(num, den, what: str) -> float:
    if den == 0:
        raise UndefinedMetricError(f"{what}: zero denominator")
    return num / den


def sg_terms(trace: Trace, window: Window | None = None, scope: Scope = FLEET) -> tuple[int, int]:
    """(numerator, denominator) of SG in chip-microseconds."""
    w = _window(trace, window)
    jobs = _in_scope(trace, scope)
    num = sum(j.chips * j.all_up_us(w) for j in jobs)
    if scope.kind == "fleet":
        den = fleet_capacity(trace.fleet, w)
    else:
        den = sum(j.chips * j.demand.measure_within(*w) for j in jobs)
    return num, den


def rg_terms(trace: Trace, window: Window | None = None, scope: Scope = FLEET) -> tuple[int, int]:
    w = _window(trace, window)
    jobs = _in_scope(trace, scope)
    num = sum(j.chips * j.committed_on_us(w) for j in jobs)
    den = sum(j.chips * j.all_up_us(w) for j in jobs)
    return num, den


def pg_terms(trace: Trace, window: Window | None = None, scope: Scope = FLEET) -> tuple[float, int]:
    """(ideal chip-seconds, committed on-duty chip-microseconds)."""
    w = _window(trace, window)
    jobs = _in_scope(trace, scope)
    return sum(j.ideal_chip_s(w) for j in jobs), sum(j.chips * j.committed_on_us(w) for j in jobs)


def scheduling_goodput(trace: Trace, window: Window | None = None, scope: Scope = FLEET):
    """Returns (sg, sg_num, sg_den) with numerator/denominator in chip-seconds."""
    num, den = sg_terms(trace, window, scope)
    return _ratio(num, den, "scheduling goodput"), num / US_PER_S, den / US_PER_S


def runtime_goodput(trace: Trace, window: Window | None = None, scope: Scope = FLEET):
    num, den = rg_terms(trace, window, scope)
    return _ratio(num, den, "runtime goodput"), num / US_PER_S, den / US_PER_S


def program_goodput(trace: Trace, window: Window | None = None, scope: Scope = FLEET):
    ideal, on = pg_terms(trace, window, scope)
    den = on / US_PER_S
    return _ratio(ideal, den, "program goodput"), ideal, den


def mpg(sg: float | None, rg: float | None, pg: float | None) -> float:
    if sg is None or rg is None or pg is None:
        raise UndefinedMetricError("MPG needs all three components")
    return sg * rg * pg


@dataclass(frozen=True)
class GoodputReport:
    scope: str
    window: Window
    sg_num: float
    sg_den: float
    rg_num: float
    rg_den: float
    pg_num: float
    pg_den: float
    sg: float | None
    rg: float | None
    pg: float | None
    mpg: float | None
    flags: tuple[str, ...] = ()

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(float(v))
        a, b = self.window
        return {
            "scope": self.scope, "window": f"{a / US_PER_S:g}:{b / US_PER_S:g}",
            "sg_num": fmt(self.sg_num), "sg_den": fmt(self.sg_den), "sg": fmt(self.sg),
            "rg_num": fmt(self.rg_num), "rg_den": fmt(self.rg_den), "rg": fmt(self.rg),
            "pg_num": fmt(self.pg_num), "pg_den": fmt(self.pg_den), "pg": fmt(self.pg),
            "mpg": fmt(self.mpg), "flags": ";".join(self.flags),
        }


def goodput_report(trace: Trace, window: Window | None = None, scope: Scope = FLEET) -> GoodputReport:
    """All four metrics for one scope; undefined components become None plus a flag."""
    w = _window(trace, window)
    sg_n, sg_d = sg_terms(trace, w, scope)
    rg_n, rg_d = rg_terms(trace, w, scope)
    ideal, on = pg_terms(trace, w, scope)
    flags = []
    sg = sg_n / sg_d if sg_d else None
    rg = rg_n / rg_d if rg_d else None
    pg = ideal / (on / US_PER_S) if on else None
    for name, v in (("sg", sg), ("rg", rg), ("pg", pg)):
        if v is None:
            flags.append(f"undefined_{name}")
        elif v > 1.0:
            flags.append(f"{name}_gt_1")
    if pg == 0.0:
        flags.append("zero_flops")
    value = None if None in (sg, rg, pg) else mpg(sg, rg, pg)
    return GoodputReport(scope.label, w, sg_n / US_PER_S, sg_d / US_PER_S, rg_n / US_PER_S, rg_d / US_PER_S,
                         ideal, on / US_PER_S, sg, rg, pg, value, tuple(flags))


def reports_to_csv(reports: Iterable[GoodputReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


# ---------- legacy metrics ----------

@dataclass(frozen=True)
class LegacyMetrics:
    capacity: float        # chip-seconds
    occupancy: float
    duty_cycle: float | None  # None when nothing was allocated


def legacy_metrics(trace: Trace, window: Window | None = None) -> LegacyMetrics:
    """Capacity, occupancy and duty cycle, the utilization view goodput replaces.

    Occupancy counts each chip's own up-time, so unlike SG it credits tasks
    that are up while a sibling task is still down. Duty cycle counts any
    stepping or checkpoint writing as busy, whether or not the work survives.
    """
    w = _window(trace, window)
    cap = fleet_capacity(trace.fleet, w)
    if cap == 0:
        raise UndefinedMetricError("occupancy: zero capacity window")
    jobs = ledger(trace).values()
    occupied = sum(j.occupied_chip_us(w) for j in jobs)
    busy = sum(j.chips * j.busy_us(w) for j in jobs)
    return LegacyMetrics(cap / US_PER_S, occupied / cap, busy / occupied if occupied else None)
