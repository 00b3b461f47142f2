"""Command line front end.

Exit codes: 0 ok, 2 config, 3 I/O, 4 corrupt trace, 5 gate failure.
Set MPGSIM_LOG (DEBUG, INFO, WARNING...) for log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import yaml

from mpgsim.analytics import DIMENSIONS, FACTORS, compare_scenarios, segment_report
from mpgsim.errors import ConfigError, InvalidComparisonError, TraceCorruptError
from mpgsim.fleet import to_us
from mpgsim.goodput import FLEET, goodput_report, reports_to_csv
from mpgsim.scenario import get_param, load_document, scenario_from_dict, with_param
from mpgsim.simulator import run
from mpgsim.trace import read_trace

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CORRUPT, EXIT_GATE = 0, 2, 3, 4, 5

log = logging.getLogger("mpgsim")


def bundled_scenarios() -> list[str]:
    root = resources.files("mpgsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_scenario(name: str) -> Path:
    """A path as given, or the name of a bundled scenario."""
    p = Path(name)
    if p.exists() or name not in bundled_scenarios():
        return p
    return Path(str(resources.files("mpgsim") / "scenarios" / f"{name}.yaml"))


def _read_doc(path: str) -> dict:
    try:
        return load_document(resolve_scenario(path))
    except OSError as exc:
        raise _IOFail(f"cannot read {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from None


class _IOFail(Exception):
    pass


def _write(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise _IOFail(f"cannot write {path}: {exc.strerror or exc}") from None


def _load_trace(path: str):
    try:
        return read_trace(path)
    except OSError as exc:
        raise _IOFail(f"cannot read {path}: {exc.strerror or exc}") from None


def parse_window(spec: str | None):
    if not spec:
        return None
    a, sep, b = spec.partition(":")
    if not sep:
        raise ConfigError("--window", "expected a:b in seconds")
    try:
        lo, hi = to_us(float(a)), to_us(float(b))
    except ValueError:
        raise ConfigError("--window", "bounds must be numbers") from None
    if lo >= hi:
        raise ConfigError("--window", "window must satisfy a < b")
    return (lo, hi)


def cmd_simulate(args) -> int:
    scenario = scenario_from_dict(_read_doc(args.scenario))
    trace = run(scenario)
    _write(args.output, trace.dumps())
    done = sum(1 for e in trace.events if e.kind == "job_completed")
    print(f"jobs_completed={done}/{len(trace.jobs)} horizon={trace.horizon / 1e6:g}s events={len(trace.events)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    window = parse_window(args.window)
    if args.segment and args.segment not in DIMENSIONS:
        raise ConfigError("--segment", f"unknown dimension; choose from {', '.join(DIMENSIONS)}")
    trace = _load_trace(args.trace)
    if window is not None and window[1] > trace.horizon:
        raise ConfigError("--window", "window extends past the trace horizon")
    reports = [goodput_report(trace, window, FLEET)]
    if args.segment:
        reports.extend(segment_report(trace, window, args.segment))
    text = reports_to_csv(reports)
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    a = _load_trace(args.a)
    b = _load_trace(args.b)
    verdict = compare_scenarios(a, b, args.factor, dead_band=args.dead_band)
    for line in verdict.lines():
        print(line)
    return EXIT_OK if verdict.matched else EXIT_GATE


def parse_values(text: str) -> list:
    values = [yaml.safe_load(tok) for tok in text.split(",") if tok.strip()]
    if not values:
        raise ConfigError("--values", "value list is empty")
    for v in values:
        if isinstance(v, bool) or isinstance(v, (int, float)):
            continue
        raise ConfigError("--values", f"{v!r} is not numeric or boolean")
    return values


def _sweep_one(doc: dict, index: int, value, outdir: str) -> dict:
    trace = run(scenario_from_dict(doc))
    out = Path(outdir)
    (out / f"run_{index:03d}.trace.jsonl").write_text(trace.dumps())
    rep = goodput_report(trace, None, FLEET)
    (out / f"run_{index:03d}.csv").write_text(reports_to_csv([rep]))
    return {"value": value, **{m: rep.row()[m] for m in ("sg", "rg", "pg", "mpg")}}


def cmd_sweep(args) -> int:
    values = parse_values(args.values)
    base = _read_doc(args.scenario)
    docs = []
    for v in values:
        try:
            get_param(base, args.param)
        except (KeyError, IndexError, TypeError, ValueError):
            # missing leaf under an existing mapping is allowed (defaulted field)
            parent, _, _ = args.param.rpartition(".")
            try:
                node = get_param(base, parent) if parent else base
            except (KeyError, IndexError, TypeError, ValueError):
                node = None
            if not isinstance(node, dict):
                raise ConfigError(args.param, "parameter path does not address a scenario field") from None
        try:
            doc = with_param(base, args.param, v)
        except (KeyError, IndexError, TypeError, ValueError):
            raise ConfigError(args.param, "parameter path does not address a scenario field") from None
        scenario_from_dict(doc)  # validate every variant before running any
        docs.append(doc)
    try:
        Path(args.output).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFail(f"cannot create {args.output}: {exc.strerror or exc}") from None

    jobs = max(1, min(len(docs), args.jobs or os.cpu_count() or 1))
    if jobs == 1:
        rows = [_sweep_one(d, i, v, args.output) for i, (d, v) in enumerate(zip(docs, values))]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_sweep_one, d, i, v, args.output) for i, (d, v) in enumerate(zip(docs, values))]
            rows = [f.result() for f in futs]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["value", "sg", "rg", "pg", "mpg"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(Path(args.output) / "summary.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpgsim", description="Fleet goodput simulator and analyzer")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write its trace")
    s.add_argument("-s", "--scenario", required=True, help="scenario file or bundled scenario name")
    s.add_argument("-o", "--output", required=True, help="trace output path")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="goodput report CSV from a trace")
    a.add_argument("-t", "--trace", required=True)
    a.add_argument("--window", help="a:b in seconds")
    a.add_argument("--segment", help=f"one of {', '.join(DIMENSIONS)}")
    a.add_argument("-o", "--output", help="CSV path (stdout if omitted)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="check a paired run against the expected sign row")
    c.add_argument("-a", required=True, help="baseline trace")
    c.add_argument("-b", required=True, help="changed trace")
    c.add_argument("--factor", required=True, choices=FACTORS)
    c.add_argument("--dead-band", type=float, default=1e-6)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="run a scenario over values of one parameter")
    w.add_argument("-s", "--scenario", required=True)
    w.add_argument("--param", required=True, help="dotted path, e.g. jobs[0].runtime.checkpoint_interval")
    w.add_argument("--values", required=True, help="comma separated list")
    w.add_argument("-o", "--output", required=True, help="output directory")
    w.add_argument("-j", "--jobs", type=int, default=None, help="worker processes")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MPGSIM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidComparisonError as exc:
        print(f"invalid comparison: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceCorruptError as exc:
        print(f"corrupt trace: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except _IOFail as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
