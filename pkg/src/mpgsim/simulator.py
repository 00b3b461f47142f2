"""Deterministic discrete-event simulation of job lifecycles on a fleet.

Lifecycle per incarnation: pending -> tasks_allocated -> task_up (staggered)
-> all_up_begin -> init -> [restore] -> stepping <-> checkpointing -> done.
Failures and preemptions drop the job back to pending and discard every step
not yet covered by a committed checkpoint.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from mpgsim.errors import ConfigError, PhaseError
from mpgsim.fleet import Fleet, classify_size, to_us
from mpgsim.program import (CompilerPass, OpGraph, StepProfile, actual_step_time, apply_pass, flop_count)
from mpgsim.scheduler import (Allocation, EvictionPolicy, JobRequest, LiveJob,
                              schedule_tick)
from mpgsim.trace import Event, JobMeta, Trace, TraceHeader, fleet_record


@dataclass(frozen=True)
class RuntimeParams:
    """Runtime overheads in seconds; ``checkpoint_interval`` in steps.

    For bulk inference ``checkpoint_interval`` is the shard size and
    ``shard_barrier_wait`` the wait before each shard commits.
    """
    init_time: float = 0.0
    checkpoint_interval: int = 1
    checkpoint_write_time: float = 0.0
    async_checkpoint: bool = False
    aot_compile: bool = False
    compile_time: float = 0.0
    restore_time: float = 0.0
    shard_barrier_wait: float = 0.0

    def __post_init__(self):
        for name in ("init_time", "checkpoint_write_time", "compile_time", "restore_time", "shard_barrier_wait"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.compile_time > self.init_time:
            raise ValueError("compile_time cannot exceed init_time")


@dataclass(frozen=True)
class JobSpec:
    request: JobRequest
    graph: str
    profile: StepProfile
    runtime: RuntimeParams = RuntimeParams()

    @property
    def job_id(self) -> str:
        return self.request.job_id


@dataclass(frozen=True)
class PassEvent:
    """A compiler pass landing at ``time`` (µs) on the selected jobs.

    Targets are ``jobs`` if given, else every job running ``graph``, else all.
    """
    time: int
    cpass: CompilerPass
    jobs: tuple[str, ...] = ()
    graph: str = ""

    def targets(self, spec: JobSpec) -> bool:
        if self.jobs:
            return spec.job_id in self.jobs
        if self.graph:
            return spec.graph == self.graph
        return True


@dataclass(frozen=True)
class Scenario:
    fleet: Fleet
    graphs: Mapping[str, OpGraph]
    jobs: tuple[JobSpec, ...]
    horizon: int
    seed: int = 0
    failures: bool = False
    mtbf_override: float | None = None
    policy: EvictionPolicy = EvictionPolicy()
    passes: tuple[PassEvent, ...] = ()
    task_stagger: int = 0
    chips_per_task: int = 4
    document: Mapping[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.horizon <= 0:
            raise ConfigError("horizon", "must be > 0")
        if self.chips_per_task < 1:
            raise ConfigError("scheduler.chips_per_task", "must be >= 1")
        if self.task_stagger < 0:
            raise ConfigError("scheduler.task_stagger", "must be >= 0")
        seen = set()
        for i, j in enumerate(self.jobs):
            if j.job_id in seen:
                raise ConfigError(f"jobs[{i}].id", f"duplicate job id {j.job_id!r}")
            seen.add(j.job_id)
            if j.graph not in self.graphs:
                raise ConfigError(f"jobs[{i}].graph", f"unknown op graph {j.graph!r}")
            if j.request.chip_kind not in self.fleet.chip_kinds:
                raise ConfigError(f"jobs[{i}].chip_kind", f"unknown chip kind {j.request.chip_kind!r}")
            if actual_step_time(j.profile).seconds <= 0:
                raise ConfigError(f"jobs[{i}].profile", "step time must be > 0")
        for i, p in enumerate(self.passes):
            for jid in p.jobs:
                if jid not in seen:
                    raise ConfigError(f"passes[{i}].jobs", f"unknown job {jid!r}")
            if p.graph and p.graph not in self.graphs:
                raise ConfigError(f"passes[{i}].graph", f"unknown op graph {p.graph!r}")

    @property
    def scenario_hash(self) -> str:
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------- failures ----------

def _chip_generator(seed: int, chip: Any) -> np.random.Generator:
    digest = hashlib.blake2b(json.dumps([seed, chip], separators=(",", ":")).encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


def inject_failures(seed: int, chips: Iterable[Any], mtbf: float, horizon: int) -> list[tuple[int, Any]]:
    """Failure times (µs) before ``horizon`` (µs) for each chip.

    Each chip draws exponential inter-arrival times with mean ``mtbf``
    seconds from its own Philox stream keyed by ``(seed, chip)``, so the
    result does not depend on chip order or on anything else simulated.
    """
    if not mtbf > 0:
        raise ValueError("mtbf must be > 0")
    if math.isinf(mtbf):
        return []
    horizon_s = horizon / 1e6
    out = []
    for chip in chips:
        rng = _chip_generator(seed, chip)
        t = 0.0
        while True:
            t += float(rng.exponential(mtbf))
            if t >= horizon_s:
                break
            out.append((to_us(t), chip))
    out.sort(key=lambda x: (x[0], json.dumps(x[1])))
    return [x for x in out if x[0] < horizon]


# ---------- serving / bulk inference commits ----------

@dataclass(frozen=True)
class CommitAction:
    commit: bool
    barrier_us: int = 0


def serving_commit_model(job: JobSpec, steps_done: int) -> CommitAction:
    """Commit decision after ``steps_done`` batches of a non-training job.

    Serving commits every completed batch immediately. Bulk inference commits
    once per shard of ``checkpoint_interval`` batches (or at the end of work)
    after a shard barrier wait.
    """
    phase = job.request.phase
    if phase == "serving":
        return CommitAction(True)
    if phase == "bulk_inference":
        shard = job.runtime.checkpoint_interval
        if steps_done % shard == 0 or steps_done == job.request.work:
            return CommitAction(True, to_us(job.runtime.shard_barrier_wait))
        return CommitAction(False)
    raise PhaseError(f"job {job.job_id}: serving_commit_model needs serving or bulk_inference, got {phase}")


# ---------- engine ----------

_PRIO = {"seg_end": 0, "ckpt_done": 1, "commit": 1, "init_done": 2, "restore_done": 2,
         "task_up": 3, "failure": 4, "pass": 5, "arrival": 6}


def task_split(chips: int, per_task: int) -> list[int]:
    n = -(-chips // per_task)
    return [per_task] * (n - 1) + [chips - per_task * (n - 1)]


class _Job:
    def __init__(self, spec: JobSpec, scenario: Scenario):
        self.spec = spec
        self.req = spec.request
        self.profile = spec.profile
        self.state = "new"
        self.inc = 0
        self.committed = 0
        self.progress = 0
        self.alloc: Allocation | None = None
        self.tasks = task_split(self.req.chip_count, scenario.chips_per_task)
        self.tasks_up = 0
        self.all_up = False
        self.token = 0
        self.seg_token = 0
        self.seg = None
        self.inflight = None
        self.stalled = False
        kind = scenario.fleet.chip_kinds[self.req.chip_kind]
        self.ideal = flop_count(scenario.graphs[spec.graph]) / (kind.peak_flops * self.req.chip_count)

    def step_us(self) -> tuple[int, int]:
        on = to_us(self.profile.device_path_time)
        wall = max(on, to_us(self.profile.host_time), 1)
        return wall, on


class _Engine:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.events: list[Event] = []
        self.heap: list = []
        self.counter = 0
        self.jobs = {j.job_id: _Job(j, scenario) for j in scenario.jobs}
        self.pending: set[str] = set()
        self.live: dict[str, LiveJob] = {}
        self.compiled: set[tuple[str, str]] = set()
        self.dirty = False

    # plumbing

    def push(self, t: int, action: str, job: str = "", token: int = 0, payload: Any = None):
        heapq.heappush(self.heap, (t, _PRIO[action], job, self.counter, action, token, payload))
        self.counter += 1

    def emit(self, t: int, kind: str, job: _Job, chips: int | None = None, **data):
        self.events.append(Event(len(self.events), t, kind, job.req.job_id,
                                 job.req.chip_count if chips is None else chips, data))

    # lifecycle

    def arrive(self, t: int, job: _Job):
        self.emit(t, "job_submitted", job, priority=job.req.priority)
        job.state = "pending"
        self.pending.add(job.req.job_id)
        self.dirty = True

    def allocate(self, t: int, alloc: Allocation):
        job = self.jobs[alloc.job_id]
        self.pending.discard(alloc.job_id)
        job.inc += 1
        job.alloc = alloc
        job.tasks_up = 0
        job.all_up = False
        job.state = "starting"
        self.live[alloc.job_id] = LiveJob(job.req, alloc)
        self.emit(t, "tasks_allocated", job, inc=job.inc, pod=alloc.pod_id, origin=list(alloc.origin),
                  shape=list(alloc.shape.dims), tasks=len(job.tasks))
        for i in range(len(job.tasks)):
            delay = i * self.sc.task_stagger
            if delay == 0:
                self.task_up(t, job, i)
            else:
                self.push(t + delay, "task_up", alloc.job_id, job.token, i)

    def task_up(self, t: int, job: _Job, i: int):
        self.emit(t, "task_up", job, job.tasks[i], inc=job.inc, task=i)
        job.tasks_up += 1
        if job.tasks_up == len(job.tasks):
            job.all_up = True
            self.emit(t, "all_up_begin", job, inc=job.inc)
            job.state = "init"
            rt = job.spec.runtime
            init = to_us(rt.init_time)
            key = (job.spec.graph, job.req.chip_kind)
            if rt.aot_compile and key in self.compiled:
                init -= to_us(rt.compile_time)
            self.push(t + init, "init_done", job.req.job_id, job.token)

    def init_done(self, t: int, job: _Job):
        self.compiled.add((job.spec.graph, job.req.chip_kind))
        if job.committed > 0:
            job.state = "restore"
            self.emit(t, "restore_begin", job, inc=job.inc, committed=job.committed)
            self.push(t + to_us(job.spec.runtime.restore_time), "restore_done", job.req.job_id, job.token)
        else:
            self.start_stepping(t, job)

    def restore_done(self, t: int, job: _Job):
        self.emit(t, "restore_end", job, inc=job.inc)
        self.start_stepping(t, job)

    def start_stepping(self, t: int, job: _Job):
        work = job.req.work
        if job.req.phase == "serving":
            boundary = work
        else:
            interval = job.spec.runtime.checkpoint_interval
            boundary = min((job.progress // interval + 1) * interval, work)
        wall, on = job.step_us()
        n = boundary - job.progress
        job.seg = (t, job.progress, n, wall, on, job.ideal)
        job.seg_token += 1
        job.state = "stepping"
        self.push(t + n * wall, "seg_end", job.req.job_id, job.token, job.seg_token)

    def record_steps(self, t: int, job: _Job, count: int):
        t0, first, _, wall, on, ideal = job.seg
        if count > 0:
            self.emit(t, "step_committed", job, inc=job.inc, first=first, n=count, t0=t0, wall=wall, on=on,
                      ideal=ideal, commit="continuous" if job.req.phase == "serving" else "checkpoint")
        job.progress = first + count
        job.seg = None

    def seg_end(self, t: int, job: _Job):
        t0, first, n, wall, _, _ = job.seg
        self.record_steps(t, job, (t - t0) // wall)
        self.after_steps(t, job)

    def after_steps(self, t: int, job: _Job):
        phase = job.req.phase
        work = job.req.work
        if phase == "serving":
            job.committed = job.progress
            if job.progress == work:
                self.complete(t, job)
            else:
                self.start_stepping(t, job)
        elif phase == "bulk_inference":
            act = serving_commit_model(job.spec, job.progress)
            if act.commit:
                job.state = "ckpt"
                self.emit(t, "checkpoint_begin", job, inc=job.inc, step=job.progress, mode="shard_barrier")
                self.push(t + act.barrier_us, "ckpt_done", job.req.job_id, job.token, job.progress)
            else:
                self.start_stepping(t, job)
        elif job.progress % job.spec.runtime.checkpoint_interval == 0:
            self.checkpoint(t, job)
        elif job.progress == work:
            self.complete(t, job)
        else:
            self.start_stepping(t, job)

    def checkpoint(self, t: int, job: _Job):
        rt = job.spec.runtime
        write = to_us(rt.checkpoint_write_time)
        if not rt.async_checkpoint:
            job.state = "ckpt"
            self.emit(t, "checkpoint_begin", job, inc=job.inc, step=job.progress, mode="sync")
            self.push(t + write, "ckpt_done", job.req.job_id, job.token, job.progress)
            return
        if job.inflight is not None:
            job.state = "wait"
            job.stalled = True
            return
        self.emit(t, "checkpoint_begin", job, inc=job.inc, step=job.progress, mode="async")
        job.inflight = job.progress
        self.push(t + write, "commit", job.req.job_id, job.token, job.progress)
        if job.progress == job.req.work:
            job.state = "wait"
        else:
            self.start_stepping(t, job)

    def ckpt_done(self, t: int, job: _Job, count: int):
        self.emit(t, "checkpoint_committed", job, inc=job.inc, committed=count)
        job.committed = count
        if job.progress == job.req.work:
            self.complete(t, job)
        else:
            self.start_stepping(t, job)

    def async_commit(self, t: int, job: _Job, count: int):
        self.emit(t, "checkpoint_committed", job, inc=job.inc, committed=count)
        job.committed = count
        job.inflight = None
        if job.state != "wait":
            return
        if job.stalled:
            job.stalled = False
            self.checkpoint(t, job)
        elif job.progress == job.req.work:
            self.complete(t, job)

    def take_down(self, t: int, job: _Job):
        if job.all_up:
            self.emit(t, "all_up_end", job, inc=job.inc)
        for i in range(job.tasks_up):
            self.emit(t, "task_down", job, job.tasks[i], inc=job.inc, task=i)
        job.all_up = False
        job.tasks_up = 0
        job.token += 1
        job.alloc = None
        self.live.pop(job.req.job_id, None)
        self.dirty = True

    def complete(self, t: int, job: _Job):
        job.committed = job.req.work
        self.take_down(t, job)
        self.emit(t, "job_completed", job, inc=job.inc, committed=job.committed)
        job.state = "done"

    def interrupt(self, t: int, job: _Job):
        if job.state == "stepping":
            t0, first, n, wall, _, _ = job.seg
            self.record_steps(t, job, min(n, (t - t0) // wall))
        if job.req.phase == "serving":
            job.committed = job.progress
        job.progress = job.committed
        job.inflight = None
        job.stalled = False
        job.seg = None
        self.take_down(t, job)
        job.state = "pending"
        self.pending.add(job.req.job_id)

    def failure(self, t: int, chip):
        pod_id, coord = chip
        for jid, lj in sorted(self.live.items()):
            a = lj.allocation
            if a.pod_id == pod_id and all(o <= c < o + d for o, c, d in zip(a.origin, coord, a.shape.dims)):
                job = self.jobs[jid]
                self.emit(t, "failure", job, pod=pod_id, chip=list(coord))
                self.interrupt(t, job)
                return

    def apply_pass(self, t: int, pe: PassEvent):
        for jid in sorted(self.jobs):
            job = self.jobs[jid]
            if not pe.targets(job.spec):
                continue
            job.profile = apply_pass(job.profile, pe.cpass)
            if job.state != "stepping":
                continue
            t0, first, n, wall, _, _ = job.seg
            done = -(-(t - t0) // wall)  # finish the in-flight step on the old profile
            if done >= n:
                continue
            if done == 0:
                job.seg = None
                self.start_stepping(t, job)
            else:
                job.seg = (t0, first, done, *job.seg[3:])
                job.seg_token += 1
                self.push(t0 + done * wall, "seg_end", jid, job.token, job.seg_token)

    def schedule(self, t: int):
        self.dirty = False
        pending = [self.jobs[j].req for j in sorted(self.pending)]
        if not pending:
            return
        result = schedule_tick(pending, self.live, self.sc.fleet, t, self.sc.policy)
        for jid in result.unschedulable:
            job = self.jobs[jid]
            self.pending.discard(jid)
            job.state = "unschedulable"
            self.emit(t, "unschedulable", job, reason="shape exceeds every pod of its chip kind")
        for victim, by in result.preemptions:
            job = self.jobs[victim]
            self.emit(t, "preemption", job, by=by)
            self.interrupt(t, job)
        for alloc in result.allocations:
            self.allocate(t, alloc)

    # main loop

    def dispatch(self, t: int, action: str, jid: str, token: int, payload):
        if action == "arrival":
            self.arrive(t, self.jobs[jid])
            return
        if action == "failure":
            self.failure(t, payload)
            return
        if action == "pass":
            self.apply_pass(t, payload)
            return
        job = self.jobs[jid]
        if token != job.token:
            return
        if action == "seg_end":
            if job.state == "stepping" and payload == job.seg_token:
                self.seg_end(t, job)
        elif action == "task_up":
            self.task_up(t, job, payload)
        elif action == "init_done":
            self.init_done(t, job)
        elif action == "restore_done":
            self.restore_done(t, job)
        elif action == "ckpt_done":
            self.ckpt_done(t, job, payload)
        elif action == "commit":
            self.async_commit(t, job, payload)

    def run(self) -> Trace:
        sc = self.sc
        for spec in sc.jobs:
            self.push(spec.request.arrival, "arrival", spec.job_id)
        for pe in sc.passes:
            self.push(pe.time, "pass", "", 0, pe)
        if sc.failures:
            for pod in sc.fleet.pods:
                mtbf = sc.mtbf_override if sc.mtbf_override is not None else pod.chip_kind.mtbf
                chips = [(pod.id, list(c)) for c in pod.shape.coordinates()]
                for ft, chip in inject_failures(sc.seed, chips, mtbf, sc.horizon):
                    self.push(ft, "failure", "", 0, (chip[0], tuple(chip[1])))
        guard = 0
        while self.heap and self.heap[0][0] < sc.horizon:
            t = self.heap[0][0]
            while (self.heap and self.heap[0][0] == t) or self.dirty:
                if self.heap and self.heap[0][0] == t:
                    _, _, jid, _, action, token, payload = heapq.heappop(self.heap)
                    self.dispatch(t, action, jid, token, payload)
                else:
                    self.schedule(t)
                    guard += 1
                    if guard > 10_000_000:
                        raise RuntimeError("scheduler failed to converge")
        for jid in sorted(self.jobs):
            job = self.jobs[jid]
            if job.state == "stepping":
                t0, first, n, wall, _, _ = job.seg
                self.record_steps(sc.horizon, job, min(n, (sc.horizon - t0) // wall))
        return Trace(self.header(), tuple(self.events))

    def header(self) -> TraceHeader:
        sc = self.sc
        metas = []
        for spec in sc.jobs:
            req = spec.request
            kind = sc.fleet.chip_kinds[req.chip_kind]
            metas.append(JobMeta(
                job_id=req.job_id, chips=req.chip_count, chip_kind=req.chip_kind,
                generation_tag=kind.generation_tag, size_class=classify_size(req.chip_count, sc.fleet).label,
                phase=req.phase, framework_tag=req.framework_tag, runtime_tag=req.runtime_tag,
                priority=req.priority, graph=spec.graph, arrival=req.arrival, work=req.work,
                boundedness=actual_step_time(spec.profile).boundedness,
            ))
        return TraceHeader(sc.scenario_hash, sc.seed, sc.horizon, fleet_record(sc.fleet), tuple(metas),
                           dict(sc.document))


def run(scenario: Scenario) -> Trace:
    """Simulate ``scenario`` to its horizon and return the trace."""
    scenario.validate()
    return _Engine(scenario).run()
