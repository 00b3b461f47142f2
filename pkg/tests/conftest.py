import pytest

from mpgsim.cli import bundled_scenarios, resolve_scenario
from mpgsim.fleet import ChipKind, Fleet, MeshShape, Pod
from mpgsim.scenario import load_document, scenario_from_dict
from mpgsim.simulator import run
from mpgsim.trace import Event, JobMeta, Trace, TraceHeader, fleet_record

S = 1_000_000  # microseconds per second


def bundled_doc(name: str) -> dict:
    return load_document(resolve_scenario(name))


def run_doc(doc: dict) -> Trace:
    return run(scenario_from_dict(doc))


def run_bundled(name: str) -> Trace:
    return run_doc(bundled_doc(name))


def train_doc(**runtime) -> dict:
    """One 4-chip training job: 10 steps of 1 s, ideal 0.5 s/step."""
    rt = {"init_time": 5, "checkpoint_interval": 5, "checkpoint_write_time": 1}
    rt.update(runtime)
    return {
        "horizon": 40,
        "seed": 1,
        "chip_kinds": [{"name": "tpu-a", "peak_flops": 1.0e12}],
        "fleet": {"pods": [{"id": "pod-0", "chip_kind": "tpu-a", "shape": [2, 2]}]},
        "op_graphs": {"dense": [{"id": "mm", "kind": "matmul", "dims": [10000, 10000, 10000]}]},
        "jobs": [{
            "id": "train-0", "chip_kind": "tpu-a", "shape": [2, 2], "work": 10, "graph": "dense",
            "profile": {"device_compute_time": 1.0}, "runtime": rt,
        }],
    }


def small_fleet(chips: int) -> Fleet:
    kind = ChipKind("tpu-a", 1.0e12, generation_tag="gen-a")
    return Fleet((Pod("pod-0", kind, MeshShape((chips,))),), chip_kinds={"tpu-a": kind})


def meta(job_id: str, chips: int, **kw) -> JobMeta:
    base = dict(job_id=job_id, chips=chips, chip_kind="tpu-a", generation_tag="gen-a", size_class="small",
                phase="training", framework_tag="", runtime_tag="", priority=0, graph="g", arrival=0, work=1,
                boundedness="device-bound")
    base.update(kw)
    return JobMeta(**base)


def make_trace(fleet_chips: int, jobs, rows, horizon: int) -> Trace:
    """Trace from ``(t, kind, job, chips, data)`` rows; times in µs."""
    rows = sorted(rows, key=lambda r: r[0])
    events = tuple(Event(i, t, kind, job, chips, dict(data)) for i, (t, kind, job, chips, data) in enumerate(rows))
    header = TraceHeader("x" * 64, 0, horizon, fleet_record(small_fleet(fleet_chips)), tuple(jobs), {})
    return Trace(header, events)


def job_rows(job: str, chips: int, t_sub: int, tasks: list[tuple[int, int | None]], inc: int = 1,
             per_task: int | None = None):
    """Submission, allocation and task up/down rows for one incarnation.

    ``tasks`` lists (up, down) per task; down None leaves the task up.
    """
    per_task = per_task or chips // len(tasks)
    rows = [(t_sub, "job_submitted", job, chips, {"priority": 0}),
            (min(u for u, _ in tasks), "tasks_allocated", job, chips, {"inc": inc, "tasks": len(tasks)})]
    for i, (up, down) in enumerate(tasks):
        rows.append((up, "task_up", job, per_task, {"inc": inc, "task": i}))
        if down is not None:
            rows.append((down, "task_down", job, per_task, {"inc": inc, "task": i}))
    return rows


def steps_row(t_end: int, job: str, chips: int, t0: int, n: int, wall: int, on: int, ideal: float,
              first: int = 0, inc: int = 1, commit: str = "checkpoint"):
    return (t_end, "step_committed", job, chips,
            {"inc": inc, "first": first, "n": n, "t0": t0, "wall": wall, "on": on, "ideal": ideal, "commit": commit})


@pytest.fixture(scope="session")
def scenario_names():
    return bundled_scenarios()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
