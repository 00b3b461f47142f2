"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary under "acceptance criteria".
"""
import random
import statistics
import time
from collections import defaultdict

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, S, bundled_doc, make_trace, meta, run_bundled, run_doc
from oracles import brute_min_victims, fits_somewhere, random_instance
from tracegen import random_job
from mpgsim.analytics import segment_report, simpson_check
from mpgsim.cli import main
from mpgsim.goodput import all_allocated_intervals, goodput_report, legacy_metrics, scheduling_goodput
from mpgsim.program import flop_count
from mpgsim.scenario import scenario_from_dict, with_param
from mpgsim.scheduler import EvictionPolicy, select_victims
from mpgsim.simulator import inject_failures, run
from mpgsim.trace import Event

N_JOBS = 1000


def verdict(n: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------- independent oracles ----------

def tick_scan_all_up(spans_by_task, horizon: int) -> np.ndarray:
    """Per-tick boolean: every task up at tick t."""
    all_up = np.ones(horizon, dtype=bool)
    for spans in spans_by_task:
        up = np.zeros(horizon, dtype=bool)
        for a, b in spans:
            up[a:horizon if b is None else b] = True
        all_up &= up
    return all_up


def committed_on_duty(trace, window=None, key=lambda meta: "all"):
    """Chip-seconds of on-duty time for checkpoint-committed steps, walked step by step.

    Returns {segment: (on_chip_seconds, ideal_chip_seconds)} with each step's
    on-duty interval [start, start + on) prorated against ``window``.
    """
    lo, hi = window or (0, trace.horizon)
    committed = defaultdict(int)
    for e in trace.events:
        if e.kind in ("checkpoint_committed", "job_completed"):
            committed[e.job, e.get("inc")] = max(committed[e.job, e.get("inc")], e.get("committed"))
    out = defaultdict(lambda: [0.0, 0.0])
    for e in trace.events:
        if e.kind != "step_committed":
            continue
        limit = e.get("first") + e.get("n") if e.get("commit") == "continuous" else committed[e.job, e.get("inc")]
        seg = key(trace.jobs[e.job])
        on, wall = e.get("on"), e.get("wall")
        for k in range(e.get("n")):
            if e.get("first") + k >= limit:
                break
            s = e.get("t0") + k * wall
            part = max(0, min(hi, s + on) - max(lo, s))
            out[seg][0] += e.chips * part / S
            out[seg][1] += e.chips * e.get("ideal") * part / on
    return {k: tuple(v) for k, v in out.items()}


def random_single_jobs(seed: int = 2024):
    rng = random.Random(seed)
    for k in range(N_JOBS):
        horizon = rng.randint(1, 10_000)
        rows, spans, cpt = random_job(rng, f"j{k}", horizon, max_tasks=8, max_events=100)
        yield horizon, rows, spans, cpt


# ---------- criteria ----------

def test_criterion_01_interval_algebra_oracle():
    t0 = time.perf_counter()
    mismatches = 0
    for horizon, rows, spans, _ in random_single_jobs():
        events = [Event(i, t, kind, j, c, d) for i, (t, kind, j, c, d) in enumerate(sorted(rows, key=lambda r: r[0]))]
        got = all_allocated_intervals(events, horizon)
        want = tick_scan_all_up(spans, horizon)
        mask = np.zeros(horizon, dtype=bool)
        for a, b in got:
            mask[a:b] = True
        mismatches += not np.array_equal(mask, want)
    elapsed = time.perf_counter() - t0
    verdict(1, "all_allocated_intervals matches per-tick scan", mismatches == 0 and elapsed < 10,
            f"{N_JOBS} jobs, {mismatches} mismatches, {elapsed:.2f}s")


def test_criterion_02_goodput_telescoping(scenario_names):
    worst, exact = 0.0, True
    for name in scenario_names:
        tr = run_bundled(name)
        rep = goodput_report(tr)
        capacity = tr.fleet.total_chips * tr.horizon / S
        productive = sum(on for on, _ in committed_on_duty(tr).values())
        worst = max(worst, abs(rep.sg * rep.rg - productive / capacity))
        exact &= rep.mpg is None or rep.mpg == rep.sg * rep.rg * rep.pg
    verdict(2, "sg*rg telescopes to committed chip-time / capacity; mpg = sg*rg*pg", worst <= 1e-12 and exact,
            f"{len(scenario_names)} scenarios, max error {worst:.1e}")


def test_criterion_03_sg_bounded_by_occupancy():
    violations = 0
    for horizon, rows, spans, cpt in random_single_jobs():
        chips = cpt * len(spans)
        tr = make_trace(chips, [meta(rows[0][2], chips)], rows, horizon)
        violations += scheduling_goodput(tr)[0] > legacy_metrics(tr).occupancy
    rows = [(0, "job_submitted", "a", 4, {"priority": 0}), (0, "tasks_allocated", "a", 4, {"inc": 1, "tasks": 2}),
            (0, "task_up", "a", 2, {"inc": 1, "task": 0}), (50 * S, "task_down", "a", 2, {"inc": 1, "task": 0}),
            (50 * S, "task_up", "a", 2, {"inc": 1, "task": 1}), (100 * S, "task_down", "a", 2, {"inc": 1, "task": 1})]
    alt = make_trace(4, [meta("a", 4)], rows, 100 * S)
    sg, occ = scheduling_goodput(alt)[0], legacy_metrics(alt).occupancy
    verdict(3, "SG <= occupancy, strict on alternating tasks", violations == 0 and sg < occ,
            f"{violations} violations over {N_JOBS} traces; alternating SG {sg} vs occupancy {occ}")


def test_criterion_04_directional_matrix(tmp_path, capsys):
    t0 = time.perf_counter()
    pairs = [("factor_device_bound", "compiler"), ("factor_host_bound", "compiler"),
             ("factor_runtime", "runtime"), ("factor_scheduling", "scheduler")]
    codes = {}
    for stem, factor in pairs:
        paths = []
        for side in "ab":
            path = tmp_path / f"{stem}_{side}.jsonl"
            assert main(["simulate", "-s", f"{stem}_{side}", "-o", str(path)]) == 0
            paths.append(str(path))
        codes[stem] = main(["compare", "-a", paths[0], "-b", paths[1], "--factor", factor])
    out = capsys.readouterr().out
    elapsed = time.perf_counter() - t0
    ok = all(c == 0 for c in codes.values()) and elapsed < 5
    verdict(4, "paired scenarios reproduce the directional sign matrix",
            ok and out.count("matched=yes") == len(pairs), f"exit codes {codes}, {elapsed:.2f}s")


def test_criterion_05_eviction_preference():
    t0 = time.perf_counter()
    sg = {}
    for name in ("fig11_eviction", "fig11_eviction_uniform"):
        rows = segment_report(run_bundled(name), None, "size_class")
        sg[name] = {r.scope.split("=")[1]: r.sg for r in rows}
    elapsed = time.perf_counter() - t0
    pref, uni = sg["fig11_eviction"], sg["fig11_eviction_uniform"]
    shape = pref["xl"] > pref["medium"] and pref["small"] > pref["medium"]
    shrinks = all(uni[c] - uni["medium"] < pref[c] - pref["medium"] for c in ("xl", "small"))
    detail = " ".join(f"{c}={pref[c]:.3f}/{uni[c]:.3f}" for c in pref) + f", {elapsed:.2f}s"
    verdict(5, "SG(xl), SG(small) > SG(medium); gaps shrink under uniform eviction",
            shape and shrinks and elapsed < 10, detail)


def test_criterion_06_overlap():
    doc = bundled_doc("overlap_commbound")
    walls, pgs = [], []
    for overlap in (0.0, 0.9):
        tr = run_doc(with_param(doc, "jobs[0].profile.overlap_fraction", overlap))
        walls.append({e.get("wall") for e in tr.events if e.kind == "step_committed"})
        pgs.append(goodput_report(tr).pg)
    (w0,), (w1,) = walls
    speedup = w0 / w1
    verdict(6, "overlap 0 -> 0.9 speeds steps within (1, 2] and raises PG", 1.0 < speedup <= 2.0 and pgs[1] > pgs[0],
            f"speedup {speedup:.3f}, PG {pgs[0]:.4f} -> {pgs[1]:.4f}")


def step_fields(trace, field):
    out = defaultdict(set)
    for e in trace.events:
        if e.kind == "step_committed":
            out[e.job].add(e.get(field))
    return out


def test_criterion_07_compiler_invariance(scenario_names):
    checked, bad = 0, []
    for name in scenario_names:
        doc = bundled_doc(name)
        if not doc.get("passes"):
            continue
        sc = scenario_from_dict(doc)
        before = {g: flop_count(graph) for g, graph in sc.graphs.items()}
        tr = run(sc)
        after = {g: flop_count(graph) for g, graph in sc.graphs.items()}
        checked += 1
        if before != after or any(len(v) != 1 for v in step_fields(tr, "ideal").values()):
            bad.append(name)
    # with and without the pass: same ideal per job, different actual time
    for stem in ("factor_device_bound", "factor_host_bound"):
        a, b = run_bundled(f"{stem}_a"), run_bundled(f"{stem}_b")
        if step_fields(a, "ideal") != step_fields(b, "ideal") or step_fields(a, "on") == step_fields(b, "on"):
            bad.append(stem)
    verdict(7, "flop counts and ideal step time bit-identical across passes", checked > 0 and not bad,
            f"{checked} pass schedules checked, failing: {bad or 'none'}")


def rg_of(doc) -> float:
    return goodput_report(run_doc(doc)).rg


def test_criterion_08_checkpoint_economics():
    t0 = time.perf_counter()
    base = bundled_doc("checkpoint_sweep")
    intervals = [1, 5, 20, 100]
    key = "jobs[0].runtime."
    rg = [rg_of(with_param(base, key + "checkpoint_interval", i)) for i in intervals]
    free = with_param(base, key + "checkpoint_write_time", 0)
    rg_free = [rg_of(with_param(free, key + "checkpoint_interval", i)) for i in intervals]
    paired = []
    for i in intervals:
        d = with_param(base, key + "checkpoint_interval", i)
        paired.append((rg_of(with_param(d, key + "async_checkpoint", False)),
                       rg_of(with_param(d, key + "async_checkpoint", True))))
    elapsed = time.perf_counter() - t0
    best = int(np.argmax(rg))
    interior = 0 < best < len(rg) - 1
    monotone = all(a >= b for a, b in zip(rg_free, rg_free[1:]))
    async_ok = all(a >= s for s, a in paired)
    detail = (f"RG {[round(x, 3) for x in rg]}, zero-write {[round(x, 3) for x in rg_free]}, "
              f"sync/async {[(round(s, 3), round(a, 3)) for s, a in paired]}, {elapsed:.2f}s")
    verdict(8, "interior RG optimum, zero-write RG non-increasing, async >= sync",
            interior and monotone and async_ok and elapsed < 30, detail)


def test_criterion_09_failure_calibration():
    chips = [("pod", (i,)) for i in range(1000)]
    counts = [len(inject_failures(seed, chips, 1e6, 10_000 * S)) for seed in range(30)]
    mean = statistics.fmean(counts)
    verdict(9, "mean failures over 30 seeds within 10 +/- 2", abs(mean - 10) <= 2, f"mean {mean:.2f}")


def test_criterion_10_simpson():
    windows = (0, 100 * S), (100 * S, 200 * S)
    tag = lambda m: f"framework_tag={m.framework_tag}"
    tr = run_bundled("simpson")
    res = simpson_check(*(segment_report(tr, w, "framework_tag") for w in windows))
    weights_ok = True
    for w, attr in zip(windows, ("weight_before", "weight_after")):
        oracle = committed_on_duty(tr, w, tag)
        total = sum(on for on, _ in oracle.values())
        for e in res.evidence:
            weights_ok &= getattr(e, attr) == pytest.approx(oracle[e.segment][0] / total, rel=1e-12)
        for e in res.evidence:
            on, ideal = oracle[e.segment]
            val = e.value_before if attr == "weight_before" else e.value_after
            weights_ok &= val == pytest.approx(ideal / on, rel=1e-12)
    ctl = run_bundled("simpson_control")
    control = simpson_check(*(segment_report(ctl, w, "framework_tag") for w in windows))
    detail = "; ".join(f"{e.segment} w {e.weight_before:.3f}->{e.weight_after:.3f} "
                       f"pg {e.value_before:.3f}->{e.value_after:.3f}" for e in res.evidence)
    verdict(10, "Simpson flag with oracle weights; control not flagged",
            res.flag and weights_ok and len(res.evidence) == 2 and not control.flag,
            f"{detail}; aggregate {res.aggregate_before:.3f}->{res.aggregate_after:.3f}")


def audit_trace(trace) -> int:
    """Replay allocations chip by chip; count chips claimed by two live jobs."""
    owner: dict = {}
    held: dict = defaultdict(list)
    clashes = 0
    for e in trace.events:
        if e.kind == "tasks_allocated":
            origin, shape = e.get("origin"), e.get("shape")
            for cell in np.ndindex(*shape):
                key = (e.get("pod"), tuple(o + c for o, c in zip(origin, cell)))
                clashes += key in owner
                owner[key] = e.job
                held[e.job].append(key)
        elif e.kind in ("job_completed", "failure", "preemption"):
            for key in held.pop(e.job, []):
                owner.pop(key, None)
    return clashes


def test_criterion_11_determinism_and_safety(scenario_names):
    nondet, clashes = [], 0
    for name in scenario_names:
        first = run_bundled(name)
        if first.dumps() != run_bundled(name).dumps():
            nondet.append(name)
        clashes += audit_trace(first)
    instances = not_minimal = 0
    for seed in range(400):
        fleet, jobs, probe = random_instance(random.Random(seed))
        if fits_somewhere(probe, fleet, [j.allocation for j in jobs]):
            continue
        instances += 1
        choice = select_victims(probe, jobs, fleet, EvictionPolicy())
        best = brute_min_victims(probe, jobs, fleet)
        not_minimal += (choice is None) != (best is None) or (choice is not None and len(choice.victims) != best)
    verdict(11, "byte-identical reruns, no shared chips, minimal victim sets",
            not nondet and clashes == 0 and not_minimal == 0 and instances > 0,
            f"nondeterministic {nondet or 'none'}, {clashes} clashes, {not_minimal}/{instances} non-minimal")
