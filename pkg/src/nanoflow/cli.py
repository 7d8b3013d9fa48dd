"""nanoflow command line.

    nanoflow run            --strategy pu --mode measure --policy p.json
                            [--upgrades plan.json] [--trace-out t.jsonl] prog.njs
    nanoflow analyze        --trace t.jsonl [--source LOC --sink LOC]
    nanoflow infer-upgrades --policy p.json [--tests dir/] [--out plan.json] prog.njs
    nanoflow check-secrecy  --policy p.json --condition explicit|observable|noninterference
                            [--seed N] prog.njs
    nanoflow metrics        --policy p.json [--tests dir/] prog.njs

Exit codes: 0 completed, 2 the monitor stopped the run, 3 runtime or
input error, 64 usage error.  All reports are single-line JSON on stdout
with sorted keys, so identical invocations are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import lang, metrics, secrecy, traceanalysis, upgrades
from .lang import Loc, NanoSyntaxError
from .monitor import (DEFAULT_BUDGET, Mode, NanoRuntimeError, Outcome, Policy,
                      Strategy, StrategyConfig, build_initial_state, run)

EX_OK = 0
EX_STOPPED = 2
EX_ERROR = 3
EX_USAGE = 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"{what} not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _UsageError(f"unreadable {what} {path}: {exc}") from exc


def _load_policy(args) -> Policy:
    policy = Policy.from_json(_load_json(args.policy, "policy file"))
    if getattr(args, "strategy", None):
        policy = Policy(policy.sources, Strategy(args.strategy), policy.mode,
                        policy.bindings)
    if getattr(args, "mode", None):
        policy = Policy(policy.sources, policy.strategy, Mode(args.mode),
                        policy.bindings)
    return policy


def _load_program(path: str) -> lang.Stmt:
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"program not found: {path}")
    return lang.parse(p.read_text(encoding="utf-8"), p.name)


def _load_tests(args, policy: Policy) -> list:
    """Test initializations: one (env, heap) per JSON file in --tests,
    or the bare policy environment when no directory is given."""
    if not getattr(args, "tests", None):
        return [build_initial_state(policy.bindings)]
    test_dir = Path(args.tests)
    if not test_dir.is_dir():
        raise _UsageError(f"tests directory not found: {args.tests}")
    inits = []
    for path in sorted(test_dir.glob("*.json")):
        merged = policy.merged_env(_load_json(str(path), "test file"))
        inits.append(build_initial_state(merged.bindings))
    if not inits:
        raise _UsageError(f"no *.json test files in {args.tests}")
    return inits


def _violation_json(v) -> dict:
    return {"kind": v.reason.value, "loc": str(v.loc), "var": v.var}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    policy = _load_policy(args)
    program = _load_program(args.program)
    plan = None
    if args.upgrades:
        plan = upgrades.load_plan(args.upgrades, program) \
            if Path(args.upgrades).is_file() else None
        if plan is None:
            raise _UsageError(f"upgrade plan not found: {args.upgrades}")
    result = run(program, cfg=policy.config, policy=policy, budget=args.budget,
                 upgrades=plan.as_interception_map() if plan else None,
                 program_name=Path(args.program).name)
    if args.trace_out:
        traceanalysis.write_trace(result.trace, args.trace_out)
    _emit({
        "outcome": result.outcome.value,
        "counters": result.counters.as_dict(),
        "sinkCount": result.sink_count.as_dict(),
        "violations": [_violation_json(v) for v in result.violations],
        "stop": _violation_json(result.stop) if result.stop else None,
    })
    if result.outcome is Outcome.COMPLETED:
        return EX_OK
    if result.outcome is Outcome.STOPPED:
        return EX_STOPPED
    return EX_ERROR


def _flow_reports(trace: traceanalysis.Trace, source_locs, sink_locs) -> list:
    graph = traceanalysis.build_edg(trace)
    subtraces = []
    for lsrc in source_locs:
        for lsnk in sink_locs:
            sub = traceanalysis.source_to_sink_subtrace(graph, trace, lsrc, lsnk)
            if sub.events:
                subtraces.append(sub)
    seen = {}
    for sub in subtraces:
        key = frozenset(e.loc for e in sub.events)
        if key in seen:
            seen[key]["multiplicity"] += 1
            continue
        cls = traceanalysis.classify_subtrace(sub)
        explicit_path = traceanalysis.has_explicit_path(sub)
        nonhidden_path = traceanalysis.has_nonhidden_path(sub)
        seen[key] = {
            "locations": sorted(str(loc) for loc in key),
            "classification": cls.value,
            "events": len(sub.events),
            "multiplicity": 1,
            "detectable": {
                s: traceanalysis.detectable_by(cls, s, explicit_path, nonhidden_path)
                for s in ("taint", "observable", "nsu", "pu")
            },
        }
    return sorted(seen.values(), key=lambda r: r["locations"])


def cmd_analyze(args) -> int:
    if not Path(args.trace).is_file():
        raise _UsageError(f"trace file not found: {args.trace}")
    trace = traceanalysis.read_trace(args.trace)
    result = traceanalysis.interpret_trace(trace)
    if args.source and args.sink:
        source_locs = [Loc.parse(args.source)]
        sink_locs = [Loc.parse(args.sink)]
    else:
        source_locs = sorted({e.loc for e in trace.events
                              if isinstance(e, (traceanalysis.SourceEvent,
                                                traceanalysis.UpgradeEvent))})
        sink_locs = sorted({e.loc for e in trace.events
                            if isinstance(e, traceanalysis.SinkEvent)})
    flows = _flow_reports(trace, source_locs, sink_locs) \
        if source_locs and sink_locs else []
    _emit({
        "microflows": {"explicit": result.explicit, "observable": result.observable,
                       "hidden": result.hidden},
        "flows": flows,
    })
    return EX_OK


def cmd_infer_upgrades(args) -> int:
    policy = _load_policy(args)
    program = _load_program(args.program)
    tests = _load_tests(args, policy)
    plan = upgrades.infer_upgrades(program, tests, policy, budget=args.budget)
    if args.out:
        upgrades.save_plan(plan, args.out)
    _emit(plan.to_json())
    return EX_OK


def cmd_check_secrecy(args) -> int:
    policy = _load_policy(args)
    program = _load_program(args.program)
    init = build_initial_state(policy.bindings)
    check = {
        "explicit": secrecy.check_explicit_secrecy,
        "observable": secrecy.check_observable_secrecy,
        "noninterference": secrecy.check_noninterference,
    }[args.condition]
    verdict = check(program, init, policy, budget=args.budget)
    counterexample = None
    if verdict.counterexample is not None:
        env, heap = verdict.counterexample

        def show(v):
            return {"value": v.render(), "label": v.label.value}

        counterexample = {
            "env": {name: show(v) for name, v in env.items()},
            "heap": {str(addr): {f: show(v) for f, v in rec.items()}
                     for addr, rec in heap.items()},
        }
    _emit({
        "condition": args.condition,
        "verdict": verdict.kind.value,
        "counterexample": counterexample,
        "reason": verdict.reason or None,
    })
    return EX_OK


def cmd_metrics(args) -> int:
    policy = _load_policy(args)
    program = _load_program(args.program)
    tests = _load_tests(args, policy)
    _emit(metrics.metrics_report(program, tests, policy, budget=args.budget))
    return EX_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="nanoflow", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_budget(p):
        p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)

    p_run = sub.add_parser("run", help="execute a program under a monitor")
    p_run.add_argument("--strategy", choices=[s.value for s in Strategy])
    p_run.add_argument("--mode", choices=[m.value for m in Mode])
    p_run.add_argument("--policy", required=True)
    p_run.add_argument("--upgrades")
    p_run.add_argument("--trace-out")
    add_budget(p_run)
    p_run.add_argument("program")
    p_run.set_defaults(fn=cmd_run)

    p_an = sub.add_parser("analyze", help="offline analysis of an iFlow trace")
    p_an.add_argument("--trace", required=True)
    p_an.add_argument("--source")
    p_an.add_argument("--sink")
    p_an.set_defaults(fn=cmd_analyze)

    p_inf = sub.add_parser("infer-upgrades", help="infer upgrade statements to fixpoint")
    p_inf.add_argument("--policy", required=True)
    p_inf.add_argument("--tests")
    p_inf.add_argument("--out")
    add_budget(p_inf)
    p_inf.add_argument("program")
    p_inf.set_defaults(fn=cmd_infer_upgrades)

    p_sec = sub.add_parser("check-secrecy", help="run the security-condition oracle")
    p_sec.add_argument("--policy", required=True)
    p_sec.add_argument("--condition", required=True,
                       choices=["explicit", "observable", "noninterference"])
    p_sec.add_argument("--seed", type=int, default=0)  # reproducibility knob
    add_budget(p_sec)
    p_sec.add_argument("program")
    p_sec.set_defaults(fn=cmd_check_secrecy)

    p_met = sub.add_parser("metrics", help="LCR, SBC, and permissiveness report")
    p_met.add_argument("--policy", required=True)
    p_met.add_argument("--tests")
    add_budget(p_met)
    p_met.add_argument("program")
    p_met.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        sys.stderr.write(f"nanoflow: {exc}\n")
        return EX_USAGE
    except NanoSyntaxError as exc:
        _emit({"error": "syntax", "loc": str(exc.loc), "message": exc.message})
        return EX_ERROR
    except NanoRuntimeError as exc:
        _emit({"error": type(exc).__name__, "loc": str(exc.loc),
               "message": exc.message})
        return EX_ERROR
    except (traceanalysis.FormatError, traceanalysis.MalformedTrace,
            traceanalysis.NoSuchLocation, upgrades.RoundLimitExceeded) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return EX_ERROR


if __name__ == "__main__":
    sys.exit(main())
