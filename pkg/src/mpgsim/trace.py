"""Trace records and their line-delimited JSON encoding.

File layout, one JSON object per line with sorted keys and no spaces:

* line 1: header ``{"type": "header", "format": "mpgsim-trace/1", ...}``
* one line per event ``{"chips", "job", "kind", "seq", "t", ...extra}``
* last line: trailer ``{"type": "end", "events": N}``

A file without its trailer is treated as truncated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator

from mpgsim.errors import TraceCorruptError
from mpgsim.fleet import ChipKind, Fleet, MeshShape, Pod, SizeClass, classify_size

FORMAT = "mpgsim-trace/1"

EVENT_KINDS = (
    "job_submitted", "tasks_allocated", "task_up", "task_down", "all_up_begin", "all_up_end",
    "step_committed", "checkpoint_begin", "checkpoint_committed", "failure", "preemption",
    "restore_begin", "restore_end", "job_completed", "unschedulable",
)
_CORE = ("seq", "t", "kind", "job", "chips")


@dataclass(frozen=True)
class Event:
    seq: int
    t: int
    kind: str
    job: str
    chips: int
    data: dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.data.get(key, default)

    def to_record(self) -> dict[str, Any]:
        return {"seq": self.seq, "t": self.t, "kind": self.kind, "job": self.job, "chips": self.chips, **self.data}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Event":
        data = {k: v for k, v in rec.items() if k not in _CORE}
        return cls(int(rec["seq"]), int(rec["t"]), rec["kind"], rec["job"], int(rec["chips"]), data)


@dataclass(frozen=True)
class JobMeta:
    """Per-job facts the analytics need, copied into the trace header."""
    job_id: str
    chips: int
    chip_kind: str
    generation_tag: str
    size_class: str
    phase: str
    framework_tag: str
    runtime_tag: str
    priority: int
    graph: str
    arrival: int
    work: int
    boundedness: str

    def dimension(self, dim: str) -> str:
        return getattr(self, dim)


@dataclass(frozen=True)
class TraceHeader:
    scenario_hash: str
    seed: int
    horizon: int
    fleet: dict[str, Any]
    jobs: tuple[JobMeta, ...]
    scenario: dict[str, Any]

    def to_record(self) -> dict[str, Any]:
        return {
            "type": "header", "format": FORMAT, "scenario_hash": self.scenario_hash, "seed": self.seed,
            "horizon": self.horizon, "fleet": self.fleet,
            "jobs": [vars(j) for j in self.jobs], "scenario": self.scenario,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TraceHeader":
        return cls(rec["scenario_hash"], int(rec["seed"]), int(rec["horizon"]), rec["fleet"],
                   tuple(JobMeta(**j) for j in rec["jobs"]), rec["scenario"])


def fleet_record(fleet: Fleet) -> dict[str, Any]:
    return {
        "size_thresholds": list(fleet.size_thresholds),
        "chip_kinds": [
            {"name": k.name, "peak_flops": k.peak_flops, "generation_tag": k.generation_tag}
            for k in sorted(fleet.chip_kinds.values(), key=lambda k: k.name)
        ],
        "pods": [
            {"id": p.id, "chip_kind": p.chip_kind.name, "shape": list(p.shape.dims), "cell": p.cell}
            for p in fleet.pods
        ],
    }


def fleet_from_record(rec: dict[str, Any]) -> Fleet:
    kinds = {k["name"]: ChipKind(k["name"], k["peak_flops"], generation_tag=k["generation_tag"])
             for k in rec["chip_kinds"]}
    pods = tuple(Pod(p["id"], kinds[p["chip_kind"]], MeshShape(tuple(p["shape"])), p.get("cell", ""))
                 for p in rec["pods"])
    return Fleet(pods, tuple(rec["size_thresholds"]), kinds)


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    events: tuple[Event, ...]

    @cached_property
    def fleet(self) -> Fleet:
        return fleet_from_record(self.header.fleet)

    @cached_property
    def jobs(self) -> dict[str, JobMeta]:
        return {j.job_id: j for j in self.header.jobs}

    @property
    def horizon(self) -> int:
        return self.header.horizon

    def events_for(self, job_id: str) -> Iterator[Event]:
        return (e for e in self.events if e.job == job_id)

    def iter_lines(self) -> Iterator[str]:
        yield _dumps(self.header.to_record())
        for e in self.events:
            yield _dumps(e.to_record())
        yield _dumps({"type": "end", "events": len(self.events)})

    def dumps(self) -> str:
        return "\n".join(self.iter_lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def loads(text: str) -> Trace:
    return parse_lines(text.splitlines())


def read_trace(path: str | Path) -> Trace:
    return loads(Path(path).read_text())


def parse_lines(lines: Iterable[str]) -> Trace:
    header = None
    events: list[Event] = []
    ended = False
    last = (-1, -1)
    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        if ended:
            raise TraceCorruptError("content after trailer", line=lineno)
        if not line.strip():
            raise TraceCorruptError("blank line", line=lineno)
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceCorruptError(f"unparseable record: {exc.msg}", line=lineno) from None
        if not isinstance(rec, dict):
            raise TraceCorruptError("record is not an object", line=lineno)
        if lineno == 1:
            if rec.get("type") != "header" or rec.get("format") != FORMAT:
                raise TraceCorruptError("missing or unknown header", line=lineno)
            try:
                header = TraceHeader.from_record(rec)
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceCorruptError(f"bad header: {exc}", line=lineno) from None
            continue
        if rec.get("type") == "end":
            if rec.get("events") != len(events):
                raise TraceCorruptError("trailer event count mismatch", line=lineno)
            ended = True
            continue
        try:
            ev = Event.from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceCorruptError(f"bad event record: {exc}", line=lineno) from None
        if ev.kind not in EVENT_KINDS:
            raise TraceCorruptError(f"unknown event kind {ev.kind!r}", line=lineno, seq=ev.seq)
        if (ev.t, ev.seq) <= last or ev.seq != len(events):
            raise TraceCorruptError("events out of order", line=lineno, seq=ev.seq)
        last = (ev.t, ev.seq)
        events.append(ev)
    if header is None:
        raise TraceCorruptError("empty trace", line=1)
    if not ended:
        raise TraceCorruptError("truncated: missing trailer", line=lineno + 1)
    return Trace(header, tuple(events))


def size_class_label(chips: int, fleet: Fleet) -> str:
    return classify_size(chips, fleet).label


__all__ = [
    "EVENT_KINDS", "Event", "JobMeta", "SizeClass", "Trace", "TraceHeader", "fleet_from_record",
    "fleet_record", "loads", "parse_lines", "read_trace", "size_class_label",
]
