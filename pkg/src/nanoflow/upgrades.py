"""Testing-based inference of upgrade statements under the PU monitor.

The inference repeatedly runs every test under PU enforcement; each stop
on a partially-leaked use yields an upgrade insertion at the statement
where the value was used, keyed by that statement's location.  Source
text is never modified: insertions are applied at runtime by location
interception, so an inserted upgrade executes every time the statement
at its location comes into focus.  The loop ends when a full pass over
all tests completes without a stop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .lang import Loc, Stmt, count_assignments
from .monitor import (DEFAULT_BUDGET, Mode, Outcome, Policy, RunResult,
                      StopReason, Strategy, StrategyConfig, run)


class RoundLimitExceeded(Exception):
    def __init__(self, rounds: int, insertions):
        super().__init__(f"no fixpoint after {rounds} rounds "
                         f"({len(insertions)} insertions so far)")
        self.rounds = rounds
        self.insertions = insertions


@dataclass(frozen=True)
class UpgradePlan:
    insertions: frozenset  # of (Loc, variable name)
    program: Stmt

    def as_interception_map(self) -> dict:
        """Loc -> ordered tuple of variables to upgrade before the statement."""
        grouped: dict = {}
        for loc, var in sorted(self.insertions, key=lambda p: (p[0], p[1])):
            grouped.setdefault(loc, []).append(var)
        return {loc: tuple(names) for loc, names in grouped.items()}

    def to_json(self) -> dict:
        entries = [{"loc": str(loc), "var": var}
                   for loc, var in sorted(self.insertions, key=lambda p: (p[0], p[1]))]
        return {"insertions": entries}

    @staticmethod
    def from_json(obj: dict, program: Stmt) -> "UpgradePlan":
        pairs = frozenset((Loc.parse(entry["loc"]), entry["var"])
                          for entry in obj["insertions"])
        return UpgradePlan(pairs, program)


def save_plan(plan: UpgradePlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan.to_json(), fh, sort_keys=True)
        fh.write("\n")


def load_plan(path, program: Stmt) -> UpgradePlan:
    with open(path, "r", encoding="utf-8") as fh:
        return UpgradePlan.from_json(json.load(fh), program)


def _pu_enforce(policy: Policy) -> StrategyConfig:
    return StrategyConfig(Strategy.PU, Mode.ENFORCE)


def infer_upgrades(program: Stmt, tests: Iterable[tuple], policy: Policy,
                   max_rounds: Optional[int] = None,
                   budget: int = DEFAULT_BUDGET,
                   seed: Optional[frozenset] = None) -> UpgradePlan:
    """Run tests under PU/Enforce to a fixpoint of upgrade insertions.

    `tests` is a list of (env, heap) initial states.  Sink violations do
    not stop the runs here; only partially-leaked uses do, since those
    are what upgrade statements resolve.  Each round adds one insertion
    (the stop names one variable); remaining variables at the same stop
    surface in later rounds.
    """
    tests = list(tests)
    insertions = set(seed or ())
    if max_rounds is None:
        max_rounds = count_assignments(program) + 1
    for _ in range(max_rounds):
        plan = UpgradePlan(frozenset(insertions), program)
        interception = plan.as_interception_map()
        stopped = False
        for init in tests:
            result = run(program, init=init, cfg=_pu_enforce(policy),
                         policy=policy, budget=budget, upgrades=interception,
                         sink_stops=False)
            if result.outcome is Outcome.STOPPED:
                stop = result.stop
                assert stop is not None and stop.reason is StopReason.PU_USE
                assert stop.var is not None, "PU stop without a variable"
                insertions.add((stop.loc, stop.var))
                stopped = True
                break
        if not stopped:
            return UpgradePlan(frozenset(insertions), program)
    raise RoundLimitExceeded(max_rounds, frozenset(insertions))


def verify_fixpoint(program: Stmt, plan: UpgradePlan, tests: Iterable[tuple],
                    policy: Policy, budget: int = DEFAULT_BUDGET) -> bool:
    """True iff rerunning the inference from the plan adds nothing."""
    try:
        again = infer_upgrades(program, tests, policy, budget=budget,
                               seed=plan.insertions)
    except RoundLimitExceeded:
        return False
    return again.insertions == plan.insertions
