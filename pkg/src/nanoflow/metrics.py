"""Security metrics: Label Creep Ratio, Sensitive Branch Coverage, and
per-strategy permissiveness reports."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .lang import Loc, Stmt
from .monitor import (DEFAULT_BUDGET, Mode, Outcome, Policy, StopReason,
                      Strategy, StrategyConfig, run)
from . import upgrades as upgrades_mod

PERMISSIVENESS_ITERATION_BOUND = 100


@dataclass
class LcrSeries:
    points: list  # Fraction per assignment event, cumulative

    def as_floats(self) -> list:
        return [float(p) for p in self.points]


def lcr_series(assign_log: Iterable[tuple], by_location: bool = False) -> LcrSeries:
    """Cumulative ratio of sensitive assignments to all assignments.

    The default counts assignment events.  With `by_location` the ratio is
    over distinct assigned locations instead (the alternative reading of
    "variables/fields ever assigned").
    """
    points = []
    if by_location:
        seen, seen_sensitive = set(), set()
        for loc, is_sensitive in assign_log:
            seen.add(loc)
            if is_sensitive:
                seen_sensitive.add(loc)
            points.append(Fraction(len(seen_sensitive), len(seen)))
    else:
        total = sensitive_total = 0
        for _loc, is_sensitive in assign_log:
            total += 1
            sensitive_total += 1 if is_sensitive else 0
            points.append(Fraction(sensitive_total, total))
    return LcrSeries(points)


@dataclass
class SbcReport:
    conditionals: dict  # Loc -> (true covered, false covered); sensitive guards only
    ratio: Fraction


def sbc(branch_logs: Iterable[Iterable[tuple]]) -> SbcReport:
    """Sensitive Branch Coverage over a set of executions.

    A conditional belongs to the measured set when its guard was sensitive
    in at least one execution; it counts as covered when the union of all
    executions took both its branches.  With no sensitive conditionals the
    ratio is vacuously 1.
    """
    sensitive_locs = set()
    covered: dict = {}
    for log in branch_logs:
        for loc, guard_sensitive, taken in log:
            if guard_sensitive:
                sensitive_locs.add(loc)
            true_cov, false_cov = covered.get(loc, (False, False))
            covered[loc] = (true_cov or taken, false_cov or not taken)
    conditionals = {loc: covered[loc] for loc in sensitive_locs}
    if not conditionals:
        return SbcReport({}, Fraction(1))
    both = sum(1 for flags in conditionals.values() if flags[0] and flags[1])
    return SbcReport(conditionals, Fraction(both, len(conditionals)))


@dataclass
class PermissivenessReport:
    nsu_stop_locs: frozenset
    pu_stop_locs: frozenset


def permissiveness(program: Stmt, tests: Iterable[tuple], policy: Policy,
                   budget: int = DEFAULT_BUDGET) -> PermissivenessReport:
    """Code locations where NSU resp. PU enforcement terminates the tests.

    Stops are enumerated past the first one: an NSU stop location is
    suppressed (the write proceeds with a raised label) and the test
    reruns; a PU stop location receives an upgrade, exactly as in upgrade
    inference.  Sink stops are policy findings, not permissiveness, and
    are disabled here.
    """
    tests = list(tests)
    nsu_locs: set = set()
    nsu_cfg = StrategyConfig(Strategy.NSU, Mode.ENFORCE)
    for init in tests:
        for _ in range(PERMISSIVENESS_ITERATION_BOUND):
            result = run(program, init=init, cfg=nsu_cfg, policy=policy,
                         budget=budget, nsu_exempt_locs=nsu_locs,
                         sink_stops=False)
            if result.outcome is not Outcome.STOPPED:
                break
            assert result.stop is not None
            assert result.stop.reason is StopReason.NSU_WRITE
            nsu_locs.add(result.stop.loc)
    plan = upgrades_mod.infer_upgrades(program, tests, policy, budget=budget)
    pu_locs = frozenset(loc for loc, _var in plan.insertions)
    return PermissivenessReport(frozenset(nsu_locs), pu_locs)


def metrics_report(program: Stmt, tests: list, policy: Policy,
                   budget: int = DEFAULT_BUDGET,
                   lcr_by_location: bool = False) -> dict:
    """JSON-ready metrics block: LCR series of the first test's PU/Measure
    run, SBC over all runs, permissiveness stop locations, and summed
    micro-flow counters."""
    measure = StrategyConfig(Strategy.PU, Mode.MEASURE)
    runs = [run(program, init=init, cfg=measure, policy=policy, budget=budget)
            for init in tests]
    micro = {"explicit": 0, "observable": 0, "hidden": 0}
    for result in runs:
        for key, val in result.counters.as_dict().items():
            micro[key] += val
    lcr = lcr_series(runs[0].assign_log, by_location=lcr_by_location) if runs else LcrSeries([])
    coverage = sbc([result.branch_log for result in runs])
    perm = permissiveness(program, tests, policy, budget=budget)
    return {
        "lcr": lcr.as_floats(),
        "sbc": {
            "ratio": float(coverage.ratio),
            "conditionals": {str(loc): {"true": flags[0], "false": flags[1]}
                             for loc, flags in sorted(coverage.conditionals.items())},
        },
        "permissiveness": {
            "nsu": sorted(str(loc) for loc in perm.nsu_stop_locs),
            "pu": sorted(str(loc) for loc in perm.pu_stop_locs),
        },
        "microflows": micro,
    }
