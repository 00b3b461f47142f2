"""Hardware universe: chip kinds, mesh shapes, pods and fleet capacity.

All times are integer microseconds from scenario start; capacity is returned
in chip-microseconds so accounting stays exact.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence

from mpgsim.errors import ConfigError

US_PER_S = 1_000_000
DEFAULT_SIZE_THRESHOLDS = (8, 256, 2048)


def to_us(seconds: float) -> int:
    """Seconds to integer microseconds (round half to even)."""
    return int(round(seconds * US_PER_S))


def to_s(us: int | float) -> float:
    return us / US_PER_S


class SizeClass(enum.IntEnum):
    SMALL = 0
    MEDIUM = 1
    LARGE = 2
    XL = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "SizeClass":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown size class {name!r}") from None


@dataclass(frozen=True)
class ChipKind:
    name: str
    peak_flops: float
    mtbf: float = math.inf
    generation_tag: str = ""

    def __post_init__(self):
        if not self.peak_flops > 0:
            raise ValueError(f"chip kind {self.name}: peak_flops must be > 0")
        if not self.mtbf > 0:
            raise ValueError(f"chip kind {self.name}: mtbf must be > 0")


@dataclass(frozen=True)
class MeshShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"mesh must have 1-3 axes, got {list(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"mesh dims must be >= 1, got {list(dims)}")

    @property
    def chip_count(self) -> int:
        return math.prod(self.dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    def coordinates(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(d) for d in self.dims))

    def __str__(self) -> str:
        return "x".join(map(str, self.dims))


@dataclass(frozen=True)
class Pod:
    id: str
    chip_kind: ChipKind
    shape: MeshShape
    cell: str = ""

    @property
    def chip_count(self) -> int:
        return self.shape.chip_count


@dataclass(frozen=True)
class Fleet:
    pods: tuple[Pod, ...]
    size_thresholds: tuple[int, int, int] = DEFAULT_SIZE_THRESHOLDS
    chip_kinds: Mapping[str, ChipKind] = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.id for p in self.pods]
        if len(set(ids)) != len(ids):
            raise ValueError("pod ids must be unique")
        t = self.size_thresholds
        if len(t) != 3 or not (t[0] < t[1] < t[2]):
            raise ValueError(f"size thresholds must be three strictly ascending integers, got {list(t)}")

    @property
    def total_chips(self) -> int:
        return sum(p.chip_count for p in self.pods)

    def pod(self, pod_id: str) -> Pod:
        for p in self.pods:
            if p.id == pod_id:
                return p
        raise KeyError(pod_id)

    def pods_of_kind(self, kind_name: str) -> list[Pod]:
        return [p for p in self.pods if p.chip_kind.name == kind_name]


def _fail(path: str, msg: str):
    raise ConfigError(path, msg)


def build_fleet(config: Mapping[str, Any]) -> Fleet:
    """Build a validated Fleet from a scenario fragment.

    ``config`` holds ``chip_kinds`` (list of mappings with name, peak_flops,
    optional mtbf and generation_tag), ``pods`` (list with id, chip_kind,
    shape and optional cell) and optional ``size_thresholds``.
    Pods come back sorted by id.
    """
    kinds: dict[str, ChipKind] = {}
    for i, ck in enumerate(config.get("chip_kinds", [])):
        path = f"chip_kinds[{i}]"
        name = ck.get("name")
        if not name:
            _fail(f"{path}.name", "missing chip kind name")
        if name in kinds:
            _fail(f"{path}.name", f"duplicate chip kind {name!r}")
        mtbf = ck.get("mtbf")
        mtbf = math.inf if mtbf is None else float(mtbf)
        peak = float(ck.get("peak_flops", 0))
        if not peak > 0:
            _fail(f"{path}.peak_flops", "must be > 0")
        if not mtbf > 0:
            _fail(f"{path}.mtbf", "must be > 0")
        kinds[name] = ChipKind(name, peak, mtbf, str(ck.get("generation_tag") or name))

    pods_cfg: Sequence[Mapping[str, Any]] = config.get("pods", [])
    if not pods_cfg:
        _fail("fleet.pods", "fleet needs at least one pod")
    pods = []
    seen = set()
    for i, pc in enumerate(pods_cfg):
        path = f"fleet.pods[{i}]"
        pid = str(pc.get("id", ""))
        if not pid:
            _fail(f"{path}.id", "missing pod id")
        if pid in seen:
            _fail(f"{path}.id", f"duplicate pod id {pid!r}")
        seen.add(pid)
        kname = pc.get("chip_kind")
        if kname not in kinds:
            _fail(f"{path}.chip_kind", f"unknown chip kind {kname!r}")
        dims = list(pc.get("shape", []))
        if not 1 <= len(dims) <= 3:
            _fail(f"{path}.shape", f"mesh must have 1-3 axes, got {dims}")
        for j, d in enumerate(dims):
            if int(d) != d or d < 1:
                _fail(f"{path}.shape[{j}]", f"dims must be positive integers, got {d}")
        pods.append(Pod(pid, kinds[kname], MeshShape(tuple(dims)), str(pc.get("cell") or "")))

    thresholds = tuple(config.get("size_thresholds") or DEFAULT_SIZE_THRESHOLDS)
    if len(thresholds) != 3 or not (thresholds[0] < thresholds[1] < thresholds[2]):
        _fail("fleet.size_thresholds", f"need three strictly ascending integers, got {list(thresholds)}")
    pods.sort(key=lambda p: p.id)
    return Fleet(tuple(pods), thresholds, dict(kinds))


def fleet_capacity(fleet: Fleet, window: tuple[int, int]) -> int:
    """Capacity of ``fleet`` over ``window`` (microseconds) in chip-microseconds."""
    start, end = window
    if end < start:
        raise ValueError("window end precedes start")
    return sum(p.chip_count * (end - start) for p in fleet.pods)


def classify_size(chip_count: int, fleet: Fleet | Sequence[int]) -> SizeClass:
    t1, t2, t3 = fleet.size_thresholds if isinstance(fleet, Fleet) else tuple(fleet)
    if chip_count < 1:
        raise ValueError("chip_count must be >= 1")
    if chip_count <= t1:
        return SizeClass.SMALL
    if chip_count <= t2:
        return SizeClass.MEDIUM
    if chip_count <= t3:
        return SizeClass.LARGE
    return SizeClass.XL
