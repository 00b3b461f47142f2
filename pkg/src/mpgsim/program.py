"""ML program model: unoptimized op graph, step-time cost model, compiler passes.

The op graph is the source of ideal FLOPs and is never touched by passes.
Passes only rewrite a :class:`StepProfile`, which is what sets actual time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from mpgsim.errors import UndefinedMetricError
from mpgsim.fleet import ChipKind

INT64_MAX = 2**63 - 1

OP_KINDS = ("matmul", "elementwise", "embedding_lookup", "collective_comm")
_DIM_ARITY = {"matmul": 3, "elementwise": 1, "embedding_lookup": 2, "collective_comm": 1}


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: str
    dims: tuple[int, ...]
    predecessors: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))
        if self.kind not in OP_KINDS:
            raise ValueError(f"op {self.id}: unknown kind {self.kind!r}")
        if len(self.dims) != _DIM_ARITY[self.kind]:
            raise ValueError(f"op {self.id}: {self.kind} takes {_DIM_ARITY[self.kind]} dims, got {len(self.dims)}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"op {self.id}: dims must be positive")

    def flops(self) -> int:
        d = self.dims
        if self.kind == "matmul":
            return 2 * d[0] * d[1] * d[2]
        if self.kind == "elementwise":
            return d[0]
        if self.kind == "embedding_lookup":
            return 2 * d[0] * d[1]
        return 0


@dataclass(frozen=True)
class OpGraph:
    label: str
    nodes: tuple[OpNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"graph {self.label}: duplicate node ids")
        known = set(ids)
        for n in self.nodes:
            missing = [p for p in n.predecessors if p not in known]
            if missing:
                raise ValueError(f"graph {self.label}: node {n.id} has unknown predecessors {missing}")
        self.topological_order()  # raises on cycles

    def topological_order(self) -> list[OpNode]:
        by_id = {n.id: n for n in self.nodes}
        indeg = {n.id: len(set(n.predecessors)) for n in self.nodes}
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for p in set(n.predecessors):
                succ[p].append(n.id)
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            nid = ready.pop(0)
            order.append(by_id[nid])
            for s in sorted(succ[nid]):
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
            ready.sort()
        if len(order) != len(self.nodes):
            raise ValueError(f"graph {self.label}: contains a cycle")
        return order


def graph_from_spec(label: str, nodes: Iterable[Mapping]) -> OpGraph:
    return OpGraph(label, tuple(
        OpNode(str(n["id"]), n["kind"], tuple(n["dims"]), tuple(n.get("preds", n.get("predecessors", ()))))
        for n in nodes
    ))


def flop_count(graph: OpGraph) -> int:
    """Ideal FLOPs of one step of the unoptimized graph."""
    total = 0
    for node in graph.nodes:
        total += node.flops()
        if total > INT64_MAX:
            raise OverflowError(f"graph {graph.label}: FLOP count exceeds 2^63-1")
    return total


def ideal_exec_time(graph: OpGraph, chip_kind: ChipKind, chip_count: int, steps: int = 1) -> float:
    """Roofline time in seconds for ``steps`` steps at peak on ``chip_count`` chips."""
    if chip_count < 1:
        raise ValueError("chip_count must be >= 1")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return steps * flop_count(graph) / (chip_kind.peak_flops * chip_count)


@dataclass(frozen=True)
class StepProfile:
    """Per-step timing, seconds."""
    device_compute_time: float
    comm_time: float = 0.0
    host_time: float = 0.0
    overlap_fraction: float = 0.0

    def __post_init__(self):
        for name in ("device_compute_time", "comm_time", "host_time"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite value >= 0, got {v}")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError(f"overlap_fraction must be in [0, 1], got {self.overlap_fraction}")

    @property
    def device_path_time(self) -> float:
        """On-duty time: compute plus the communication not hidden under it."""
        return self.device_compute_time + self.comm_time * (1.0 - self.overlap_fraction)


@dataclass(frozen=True)
class StepTime:
    seconds: float
    device_bound: bool

    @property
    def boundedness(self) -> str:
        return "device-bound" if self.device_bound else "host-bound"


def actual_step_time(profile: StepProfile) -> StepTime:
    device = profile.device_path_time
    return StepTime(max(device, profile.host_time), device >= profile.host_time)


@dataclass(frozen=True)
class CompilerPass:
    name: str
    effect: str  # scale_compute | set_overlap | scale_host
    value: float

    def __post_init__(self):
        if self.effect in ("scale_compute", "scale_host"):
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"pass {self.name}: {self.effect} factor must be in (0, 1], got {self.value}")
        elif self.effect == "set_overlap":
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"pass {self.name}: overlap must be in [0, 1], got {self.value}")
        else:
            raise ValueError(f"pass {self.name}: unknown effect {self.effect!r}")


def apply_pass(profile: StepProfile, cpass: CompilerPass) -> StepProfile:
    if cpass.effect == "scale_compute":
        return replace(profile, device_compute_time=profile.device_compute_time * cpass.value)
    if cpass.effect == "scale_host":
        return replace(profile, host_time=profile.host_time * cpass.value)
    return replace(profile, overlap_fraction=cpass.value)


def apply_passes(profile: StepProfile, passes: Sequence[CompilerPass]) -> StepProfile:
    for p in passes:
        profile = apply_pass(profile, p)
    return profile


@dataclass(frozen=True)
class StepGoodput:
    value: float
    flags: tuple[str, ...] = ()


def program_goodput_of_step(graph: OpGraph, chip_kind: ChipKind, chip_count: int,
                            profile: StepProfile) -> StepGoodput:
    """Ideal roofline time over on-duty (device-path) time for one step.

    Host-side stall is charged to runtime goodput, not here; see README for
    the accounting split. Values above 1 are returned as-is with a
    ``pg_gt_1`` flag.
    """
    on_duty = profile.device_path_time
    if actual_step_time(profile).seconds <= 0 or on_duty <= 0:
        raise UndefinedMetricError("program goodput undefined for a zero-time step")
    ideal = ideal_exec_time(graph, chip_kind, chip_count, 1)
    flags = []
    if ideal == 0:
        flags.append("zero_flops")
    value = ideal / on_duty
    if value > 1.0:
        flags.append("pg_gt_1")
    return StepGoodput(value, tuple(flags))
