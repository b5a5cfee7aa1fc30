"""Command line: check a scenario, or run a benchmark suite.

Exit codes: 0 the property holds, 1 it is violated, 2 a resource budget ran
out, 3 bad usage or a bad scenario.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import Inconclusive, ModelError, ScenarioError
from .explorer import (
    Explorer,
    Holds,
    Options,
    ResourceLimit,
    Violated,
    format_trace,
    replay,
    trace_document,
)
from .scenario import build, load_scenario, parse_scenario, shipped_dir

EXIT = {Holds: 0, Violated: 1, ResourceLimit: 2}
USAGE_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def make_parser():
    p = _Parser(prog="sdnmc", description="Explicit-state model checker for SDN controller programs.")
    p.add_argument("--scenario", help="scenario file, or the name of a shipped scenario")
    p.add_argument("--por", type=_on_off, default=True, metavar="on|off", help="partial-order reduction (default on)")
    p.add_argument("--merge-chains", type=_on_off, default=False, metavar="on|off", help="fuse safe actions with the action enabling them (default off)")
    p.add_argument("--validate-por", action="store_true", help="check the ample-set side conditions and compare with a full search")
    p.add_argument("--full", action="store_true", help="same as --por off")
    p.add_argument("--threads", type=int, default=1, help="worker threads (level-synchronous search when > 1)")
    p.add_argument("--max-states", type=int, help="state budget (overrides the scenario)")
    p.add_argument("--time-limit", "--duration-cap", dest="time_limit", type=float, help="wall-clock budget in seconds (overrides the scenario)")
    p.add_argument("--emit-trace", metavar="PATH", help="write a counterexample to PATH and PATH.json")
    p.add_argument("--stats", action="store_true", help="print key=value statistics")
    p.add_argument("--list", action="store_true", help="list shipped scenarios")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", help="suite file, or the name of a shipped suite")
    b.add_argument("--max-states", type=int, dest="bench_max_states")
    b.add_argument("--time-limit", "--duration-cap", type=float, dest="bench_time_limit")
    r = sub.add_parser("replay", help="replay a trace document against a scenario")
    r.add_argument("trace", help="JSON trace written by --emit-trace")
    return p


def _options(args, sc):
    budgets = sc.budgets
    return Options(
        por=args.por and not args.full,
        merge_chains=args.merge_chains,
        validate=args.validate_por,
        max_states=args.max_states if args.max_states is not None else budgets.get("max_states"),
        time_limit=args.time_limit if args.time_limit is not None else budgets.get("time_limit"),
        threads=max(1, args.threads),
    )


def _check(args, out) -> int:
    sc = load_scenario(args.scenario)
    _, program, model, prop = build(sc)
    opts = _options(args, sc)
    run = Explorer(model, prop, opts).run()
    v = run.verdict
    print(f"scenario: {sc.name} ({program.name}/{program.variant})", file=out)
    print(f"mode: {'por' if opts.por else 'full'}{' merge-chains' if opts.por and opts.merge_chains else ''}", file=out)
    if isinstance(v, Violated):
        print("verdict: Violated", file=out)
        lines = format_trace(model, v)
        for line in lines:
            print(line, file=out)
        if args.emit_trace:
            path = Path(args.emit_trace)
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            doc = trace_document(model, v)
            doc["scenario"] = sc.name
            Path(str(path) + ".json").write_text(json.dumps(doc, indent=1), encoding="utf-8")
    elif isinstance(v, ResourceLimit):
        print(f"verdict: ResourceLimit ({v.reason})", file=out)
    else:
        print("verdict: Holds", file=out)
    if args.stats:
        for line in run.stats.lines():
            print(line, file=out)
    code = EXIT[type(v)]
    if args.validate_por:
        code = _validate(sc, run, opts, out, code)
    return code


def _validate(sc, run, opts, out, code):
    """Ample-set side conditions plus agreement with a full search."""
    problems = list(run.validation)
    if opts.por and isinstance(run.verdict, Holds):
        _, _, model, prop = build(sc)
        reduced = Explorer(model, prop, Options(por=True, merge_chains=opts.merge_chains, keep_visited=True, max_states=opts.max_states)).run()
        full = Explorer(model, prop, Options(por=False, keep_visited=True, max_states=opts.max_states)).run()
        if isinstance(full.verdict, ResourceLimit):
            print("validate: full search out of budget, verdict comparison skipped", file=out)
        else:
            if type(full.verdict) is not type(reduced.verdict):
                problems.append(f"verdicts differ: full {full.verdict.name}, reduced {reduced.verdict.name}")
            if not all(k in full.visited for k in reduced.visited):
                problems.append("reduced visited set is not a subset of the full one")
            print(f"validate: full visited={full.stats.visited} reduced visited={reduced.stats.visited}", file=out)
    for p in problems:
        print(f"validate: {p}", file=out)
    print(f"validate: {'ok' if not problems else f'{len(problems)} problem(s)'}", file=out)
    return code if not problems else USAGE_ERROR


# --- bench ------------------------------------------------------------------------
def parse_suite(text):
    """Suite lines: ``grid = S H S H ...`` (MAC-learning chain sizes),
    ``scenario = NAME ...``, ``modes = por full merge``, ``max_states = N``."""
    suite = {"grid": [], "scenarios": [], "modes": ["por", "full"], "max_states": None, "time_limit": None, "template": "cp3_maclearn_2x2"}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.split()
        if not eq:
            raise ScenarioError(f"suite line {ln}: expected key = value")
        if key == "grid":
            cells = []
            for item in value:
                try:
                    s, h = item.lower().split("x")
                    cells.append((int(s), int(h)))
                except ValueError:
                    raise ScenarioError(f"suite line {ln}: grid cells look like 3x2, got {item!r}") from None
            suite["grid"] = cells
        elif key == "scenarios":
            suite["scenarios"] = value
        elif key == "modes":
            bad = [m for m in value if m not in ("por", "full", "merge")]
            if bad:
                raise ScenarioError(f"suite line {ln}: unknown modes {bad}")
            suite["modes"] = value
        elif key == "template":
            suite["template"] = value[0] if value else ""
        elif key in ("max_states", "time_limit"):
            suite[key] = (int if key == "max_states" else float)(value[0])
        else:
            raise ScenarioError(f"suite line {ln}: unknown key {key!r}")
    return suite


def bench_rows(suite):
    cells = []
    if suite["grid"]:
        base = load_scenario(suite["template"])
        for s, h in suite["grid"]:
            sc = parse_scenario(_retarget(base, s, h), name=f"{base.program}_{s}x{h}")
            cells.append((f"{s}x{h}", sc))
    for name in suite["scenarios"]:
        cells.append((name, load_scenario(name)))
    rows = []
    for label, sc in cells:
        for mode in suite["modes"]:
            _, _, model, prop = build(sc)
            opts = Options(
                por=mode != "full",
                merge_chains=mode == "merge",
                max_states=suite["max_states"] or sc.budgets.get("max_states"),
                time_limit=suite["time_limit"] or sc.budgets.get("time_limit"),
            )
            run = Explorer(model, prop, opts).run()
            st = run.stats
            rows.append(
                {
                    "cell": label,
                    "mode": mode,
                    "verdict": run.verdict.name,
                    "visited": st.visited,
                    "time_s": round(st.wall_time, 3),
                    "bytes_per_state": round(st.bytes_per_state, 1),
                    "states_per_s": round(st.throughput, 1),
                    "topped_up": isinstance(run.verdict, ResourceLimit),
                }
            )
    return rows


def _retarget(base, s, h):
    from dataclasses import replace

    from .scenario import format_scenario

    return format_scenario(replace(base, shape=f"chain {s} {h}", hosts=(), switches=(), links=()))


def format_table(rows):
    cols = ["cell", "mode", "verdict", "visited", "time_s", "bytes_per_state", "states_per_s"]
    head = " ".join(f"{c:>15}" for c in cols)
    lines = [head]
    for r in rows:
        vals = [str(r[c]) + ("+" if c == "visited" and r["topped_up"] else "") for c in cols]
        lines.append(" ".join(f"{v:>15}" for v in vals))
    return lines


def _bench(args, out) -> int:
    path = Path(args.suite)
    if not path.exists():
        alt = shipped_dir() / (args.suite if args.suite.endswith(".suite") else args.suite + ".suite")
        if not alt.exists():
            raise ScenarioError(f"no suite file {args.suite!r}")
        path = alt
    suite = parse_suite(path.read_text(encoding="utf-8"))
    if args.bench_max_states is not None:
        suite["max_states"] = args.bench_max_states
    if args.bench_time_limit is not None:
        suite["time_limit"] = args.bench_time_limit
    rows = bench_rows(suite)
    for line in format_table(rows):
        print(line, file=out)
    return 0


def _replay(args, out) -> int:
    if not args.scenario:
        raise ScenarioError("replay needs --scenario")
    sc = load_scenario(args.scenario)
    _, _, model, prop = build(sc)
    doc = json.loads(Path(args.trace).read_text(encoding="utf-8"))
    trace = [model.action_from_json(st["action"]) for st in doc["steps"]]
    _, witness = replay(model, trace, prop)
    if witness is None:
        print(f"replayed {len(trace)} steps: no violation", file=out)
        return 0
    print(f"replayed {len(trace)} steps: {witness}", file=out)
    return 1


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        if args.list:
            for p in sorted(shipped_dir().glob("*.scn")):
                print(p.stem, file=out)
            return 0
        if args.command == "bench":
            return _bench(args, out)
        if args.command == "replay":
            return _replay(args, out)
        if not args.scenario:
            print("sdnmc: error: --scenario is required", file=sys.stderr)
            return USAGE_ERROR
        return _check(args, out)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"sdnmc: scenario error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (Inconclusive, ModelError, OSError) as exc:
        print(f"sdnmc: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # keep exit codes 1 and 2 for verdicts only
        print(f"sdnmc: internal error: {exc!r}", file=sys.stderr)
        return USAGE_ERROR


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
