"""Scenario files: YAML (or JSON) documents validated into a :class:`Scenario`.

Times in the file are seconds; they become integer microseconds here.
Unknown keys are rejected, and every error carries the dotted field path.
"""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mpgsim.errors import ConfigError
from mpgsim.fleet import MeshShape, build_fleet, to_us
from mpgsim.program import CompilerPass, StepProfile, graph_from_spec
from mpgsim.scheduler import EvictionPolicy, JobRequest
from mpgsim.simulator import JobSpec, PassEvent, RuntimeParams, Scenario

SizeName = Literal["small", "medium", "large", "xl"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ChipKindModel(_Strict):
    name: str = Field(min_length=1)
    peak_flops: float = Field(gt=0)
    mtbf: Optional[float] = Field(default=None, gt=0)
    generation_tag: str = ""


class PodModel(_Strict):
    id: str = Field(min_length=1)
    chip_kind: str
    shape: list[int] = Field(min_length=1, max_length=3)
    cell: str = ""

    @field_validator("shape")
    @classmethod
    def _positive(cls, v):
        for d in v:
            if d < 1:
                raise ValueError("dims must be >= 1")
        return v


class FleetModel(_Strict):
    pods: list[PodModel] = Field(min_length=1)
    size_thresholds: list[int] = Field(default=[8, 256, 2048], min_length=3, max_length=3)


class OpNodeModel(_Strict):
    id: str
    kind: Literal["matmul", "elementwise", "embedding_lookup", "collective_comm"]
    dims: list[int] = Field(min_length=1, max_length=3)
    preds: list[str] = []


class ProfileModel(_Strict):
    device_compute_time: float = Field(ge=0)
    comm_time: float = Field(default=0.0, ge=0)
    host_time: float = Field(default=0.0, ge=0)
    overlap_fraction: float = Field(default=0.0, ge=0, le=1)


class RuntimeModel(_Strict):
    init_time: Optional[float] = Field(default=None, ge=0)
    checkpoint_interval: Optional[int] = Field(default=None, ge=1)
    checkpoint_write_time: Optional[float] = Field(default=None, ge=0)
    async_checkpoint: Optional[bool] = None
    aot_compile: Optional[bool] = None
    compile_time: Optional[float] = Field(default=None, ge=0)
    restore_time: Optional[float] = Field(default=None, ge=0)
    shard_barrier_wait: Optional[float] = Field(default=None, ge=0)


class RepeatModel(_Strict):
    count: int = Field(ge=1)
    every: float = Field(ge=0)


class JobModel(_Strict):
    id: str = Field(min_length=1)
    priority: int = 0
    chip_kind: str
    shape: list[int] = Field(min_length=1, max_length=3)
    arrival: float = Field(default=0.0, ge=0)
    work: int = Field(ge=1)
    phase: Literal["training", "serving", "bulk_inference"] = "training"
    runtime_tag: str = ""
    framework_tag: str = ""
    cell: str = ""
    graph: str
    profile: ProfileModel
    runtime: RuntimeModel = RuntimeModel()
    repeat: Optional[RepeatModel] = None

    @field_validator("shape")
    @classmethod
    def _positive(cls, v):
        for d in v:
            if d < 1:
                raise ValueError("dims must be >= 1")
        return v


class SchedulerModel(_Strict):
    eviction_preference: list[SizeName] = ["medium", "large", "small", "xl"]
    uniform_eviction: bool = False
    task_stagger: float = Field(default=0.0, ge=0)
    chips_per_task: int = Field(default=4, ge=1)

    @field_validator("eviction_preference")
    @classmethod
    def _permutation(cls, v):
        if sorted(v) != sorted(["small", "medium", "large", "xl"]):
            raise ValueError("must be a permutation of small, medium, large, xl")
        return v


class PassModel(_Strict):
    time: float = Field(ge=0)
    name: str
    effect: Literal["scale_compute", "set_overlap", "scale_host"]
    value: float
    jobs: list[str] = []
    graph: str = ""

    @model_validator(mode="after")
    def _range(self):
        if self.effect == "set_overlap":
            if not 0 <= self.value <= 1:
                raise ValueError("set_overlap value must be in [0, 1]")
        elif not 0 < self.value <= 1:
            raise ValueError(f"{self.effect} factor must be in (0, 1]")
        return self


class FailureModel(_Strict):
    enabled: bool = False
    mtbf: Optional[float] = Field(default=None, gt=0)


class ScenarioFile(_Strict):
    horizon: float = Field(gt=0)
    seed: int = 0
    chip_kinds: list[ChipKindModel] = Field(min_length=1)
    fleet: FleetModel
    op_graphs: dict[str, list[OpNodeModel]]
    runtime_presets: dict[str, RuntimeModel] = {}
    jobs: list[JobModel]
    scheduler: SchedulerModel = SchedulerModel()
    passes: list[PassModel] = []
    failures: FailureModel = FailureModel()


def _loc(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out or "<root>"


def validate_document(doc: Any) -> ScenarioFile:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    try:
        return ScenarioFile.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_loc(err["loc"]), err["msg"]) from None


def _runtime(preset: RuntimeModel | None, own: RuntimeModel) -> RuntimeParams:
    merged: dict[str, Any] = {}
    for layer in (preset, own):
        if layer is not None:
            merged.update({k: v for k, v in layer.model_dump().items() if v is not None})
    return RuntimeParams(**merged)


def scenario_from_dict(doc: dict) -> Scenario:
    model = validate_document(doc)
    document = model.model_dump(mode="json")

    fleet = build_fleet({
        "chip_kinds": [c.model_dump() for c in model.chip_kinds],
        "pods": [p.model_dump() for p in model.fleet.pods],
        "size_thresholds": model.fleet.size_thresholds,
    })

    graphs = {}
    for label, nodes in model.op_graphs.items():
        try:
            graphs[label] = graph_from_spec(label, [n.model_dump() for n in nodes])
        except (ValueError, OverflowError) as exc:
            raise ConfigError(f"op_graphs.{label}", str(exc)) from None

    jobs = []
    for i, jm in enumerate(model.jobs):
        path = f"jobs[{i}]"
        if jm.runtime_tag and jm.runtime_tag in model.runtime_presets:
            preset = model.runtime_presets[jm.runtime_tag]
        else:
            preset = None
        try:
            runtime = _runtime(preset, jm.runtime)
        except ValueError as exc:
            raise ConfigError(f"{path}.runtime", str(exc)) from None
        profile = StepProfile(**jm.profile.model_dump())
        copies = [(jm.id, jm.arrival)]
        if jm.repeat is not None:
            copies = [(f"{jm.id}-{k}", jm.arrival + k * jm.repeat.every) for k in range(jm.repeat.count)]
        for jid, arrival in copies:
            req = JobRequest(jid, jm.priority, jm.chip_kind, MeshShape(tuple(jm.shape)), to_us(arrival), jm.work,
                             jm.phase, jm.runtime_tag, jm.framework_tag, jm.cell)
            jobs.append(JobSpec(req, jm.graph, profile, runtime))

    passes = []
    for p in model.passes:
        cp = CompilerPass(p.name, p.effect, p.value)
        passes.append(PassEvent(to_us(p.time), cp, tuple(p.jobs), p.graph))

    s = model.scheduler
    scenario = Scenario(
        fleet=fleet, graphs=graphs, jobs=tuple(jobs), horizon=to_us(model.horizon), seed=model.seed,
        failures=model.failures.enabled, mtbf_override=model.failures.mtbf,
        policy=EvictionPolicy(tuple(s.eviction_preference), s.uniform_eviction),
        passes=tuple(passes), task_stagger=to_us(s.task_stagger), chips_per_task=s.chips_per_task,
        document=document,
    )
    scenario.validate()
    return scenario


def load_document(path: str | Path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    return doc


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(load_document(path))


# ---------- parameter paths (used by sweeps) ----------

def _parse_path(path: str) -> list[str | int]:
    parts: list[str | int] = []
    for chunk in path.split("."):
        if not chunk:
            raise KeyError(path)
        name, _, rest = chunk.partition("[")
        if name:
            parts.append(name)
        while rest:
            idx, _, rest = rest.partition("]")
            parts.append(int(idx))
            rest = rest.lstrip("[")
    return parts


def get_param(doc: dict, path: str) -> Any:
    node: Any = doc
    for part in _parse_path(path):
        node = node[part]
    return node


def with_param(doc: dict, path: str, value: Any) -> dict:
    """Deep copy of ``doc`` with the field at ``path`` replaced.

    Missing leaf keys inside an existing mapping are created, so defaulted
    fields such as ``jobs[0].runtime.async_checkpoint`` can be swept.
    """
    out = copy.deepcopy(doc)
    parts = _parse_path(path)
    node: Any = out
    for part in parts[:-1]:
        if isinstance(part, str) and isinstance(node, dict) and part not in node:
            node[part] = {}
        node = node[part]
    if not isinstance(node, dict if isinstance(parts[-1], str) else list):
        raise KeyError(path)
    node[parts[-1]] = value
    return out
