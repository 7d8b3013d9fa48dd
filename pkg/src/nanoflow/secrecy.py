"""Executable security conditions.

Explicit secrecy extracts the straight-line program of one run (all
control flow erased); observable secrecy keeps branching but replaces
untaken branches by skip, maintained through an evaluation context whose
hole tracks where the next statement lands.  Both conditions then ask
whether the extracted program is noninterfering for the original initial
state, which a brute-force oracle decides by enumerating every
low-equivalent variant of the sensitive inputs and comparing the
sequences of sink observations.

The theorem suite generates random terminating programs and checks the
two soundness statements: a run with zero explicit sink flows has an
explicitly-secret extraction, and a run with zero explicit and
observable sink flows has an observably-secret extraction.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from . import lang
from .lang import (Assign, AssignField, If, Lit, Loc, Seq, Sink, Skip, Stmt,
                   Var, While, seq_of)
from .monitor import (DEFAULT_BUDGET, Addr, Label, Mode, NanoRuntimeError,
                      Observer, Outcome, Policy, Strategy, StrategyConfig,
                      Value, build_initial_state, run, to_val)


class BudgetError(Exception):
    pass


_MEASURE = StrategyConfig(Strategy.PU, Mode.MEASURE)


# ---------------------------------------------------------------------------
# Low equivalence
# ---------------------------------------------------------------------------

def low_equivalent(s1: tuple, s2: tuple) -> bool:
    """States agree on labels everywhere and on payloads of insensitive
    values (addresses compared through their flattening)."""
    env1, heap1 = s1
    env2, heap2 = s2
    if env1.keys() != env2.keys() or heap1.keys() != heap2.keys():
        return False

    def values_agree(v1: Value, v2: Value, h1: dict, h2: dict) -> bool:
        if v1.label is not v2.label:
            return False
        if v1.label is Label.L:
            return to_val(h1, v1) == to_val(h2, v2)
        return True

    for name in env1:
        if not values_agree(env1[name], env2[name], heap1, heap2):
            return False
    for addr in heap1:
        rec1, rec2 = heap1[addr], heap2[addr]
        if rec1.keys() != rec2.keys():
            return False
        for fname in rec1:
            if not values_agree(rec1[fname], rec2[fname], heap1, heap2):
                return False
    return True


# ---------------------------------------------------------------------------
# Extraction observers
# ---------------------------------------------------------------------------

class _ExplicitExtractor(Observer):
    """Sequentially composes every executed non-control statement."""

    def __init__(self):
        self.stmts: list = []

    def on_stmt(self, stmt: Stmt) -> None:
        self.stmts.append(stmt)

    def result(self, fallback_loc: Loc) -> Stmt:
        return lang.normalize(seq_of(list(self.stmts), fallback_loc))


class _Scope:
    def __init__(self, guard=None, then_taken: bool = True, loc: Optional[Loc] = None):
        self.guard = guard
        self.then_taken = then_taken
        self.loc = loc
        self.items: list = []


class _ObservableExtractor(Observer):
    """Builds the evaluation-context extraction: executed statements are
    nested inside `if e then (...; hole) else skip` (or the symmetric
    shape); leaving a branch shifts the hole past the enclosing if."""

    def __init__(self, fallback_loc: Loc):
        self.fallback_loc = fallback_loc
        self.scopes = [_Scope()]

    def on_stmt(self, stmt: Stmt) -> None:
        self.scopes[-1].items.append(stmt)

    def on_branch(self, stmt: If, taken: bool) -> None:
        self.scopes.append(_Scope(stmt.guard, taken, stmt.loc))

    def on_pop(self) -> None:
        scope = self.scopes.pop()
        body = seq_of(scope.items, scope.loc)
        if scope.then_taken:
            closed = If(scope.guard, body, Skip(scope.loc), scope.loc)
        else:
            closed = If(scope.guard, Skip(scope.loc), body, scope.loc)
        self.scopes[-1].items.append(closed)

    def result(self) -> Stmt:
        # plugging the hole with skip; incomplete scopes only remain if the
        # run was cut short, which extraction callers treat as an error
        while len(self.scopes) > 1:
            self.on_pop()
        return lang.normalize(seq_of(self.scopes[0].items, self.fallback_loc))


def _fallback_loc(program: Stmt) -> Loc:
    for s in lang.iter_statements(program):
        return s.loc
    return Loc("<empty>", 1, 1)


def extract_explicit(program: Stmt, init: Optional[tuple], policy: Policy,
                     budget: int = DEFAULT_BUDGET) -> Stmt:
    extractor = _ExplicitExtractor()
    result = run(program, init=init, cfg=_MEASURE, policy=policy,
                 budget=budget, observer=extractor)
    if result.outcome is Outcome.BUDGET_EXHAUSTED:
        raise BudgetError("extraction run exhausted its step budget")
    return extractor.result(_fallback_loc(program))


def extract_observable(program: Stmt, init: Optional[tuple], policy: Policy,
                       budget: int = DEFAULT_BUDGET) -> Stmt:
    extractor = _ObservableExtractor(_fallback_loc(program))
    result = run(program, init=init, cfg=_MEASURE, policy=policy,
                 budget=budget, observer=extractor)
    if result.outcome is Outcome.BUDGET_EXHAUSTED:
        raise BudgetError("extraction run exhausted its step budget")
    return extractor.result()


# ---------------------------------------------------------------------------
# Noninterference oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LowDomain:
    """Finite payload choices used to vary sensitive inputs, per base type."""
    bools: tuple = (True, False)
    ints: tuple = (0, 1, 2)
    strings: tuple = ("", "a", "b")

    def choices_for(self, payload) -> tuple:
        if isinstance(payload, bool):
            return self.bools
        if isinstance(payload, int):
            return self.ints
        return self.strings


class VerdictKind(Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNDECIDED = "undecided"


@dataclass
class Verdict:
    kind: VerdictKind
    counterexample: Optional[tuple] = None  # a low-equivalent (env, heap)
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.kind is VerdictKind.HOLDS


_ERROR_MARK = object()


def _observe(program: Stmt, init: tuple, policy: Policy, budget: int):
    """Sink observations of one Measure run; runtime errors become a
    distinguished terminal observation, budget exhaustion returns None."""
    try:
        result = run(program, init=init, cfg=_MEASURE, policy=policy, budget=budget)
    except NanoRuntimeError as exc:
        return ("error", type(exc).__name__)
    if result.outcome is Outcome.BUDGET_EXHAUSTED:
        return None
    return ("ok", tuple(result.observations))


def _sensitive_positions(init: tuple, policy: Policy) -> list:
    """(kind, key) pairs whose base payloads the oracle varies: env
    variables and heap fields that are sensitive initially or named as
    policy sources."""
    env, heap = init
    positions = []
    source_addrs = set()
    for name, value in env.items():
        is_source = name in policy.sources
        if isinstance(value.payload, Addr):
            if is_source or value.label is not Label.L:
                source_addrs.add(value.payload)
            continue
        if is_source or value.label is not Label.L:
            positions.append(("env", name))
    # fields of source-marked objects are raised too, so vary them all
    reachable = set(source_addrs)
    frontier = list(source_addrs)
    while frontier:
        addr = frontier.pop()
        for fv in heap[addr].values():
            if isinstance(fv.payload, Addr) and fv.payload not in reachable:
                reachable.add(fv.payload)
                frontier.append(fv.payload)
    for addr, record in heap.items():
        for fname, fv in record.items():
            if isinstance(fv.payload, Addr):
                continue
            if fv.label is not Label.L or addr in reachable:
                positions.append(("field", (addr, fname)))
    return positions


def _variant(init: tuple, substitution: dict) -> tuple:
    env, heap = init
    env2 = {}
    for name, v in env.items():
        payload = substitution.get(("env", name), v.payload)
        env2[name] = Value(payload, v.label, v.count, None)
    heap2 = {}
    for addr, record in heap.items():
        heap2[addr] = {
            fname: Value(substitution.get(("field", (addr, fname)), fv.payload),
                         fv.label, fv.count, None)
            for fname, fv in record.items()
        }
    return env2, heap2


MAX_VARIANTS = 4096


def check_noninterference(program: Stmt, init: Optional[tuple], policy: Policy,
                          domain: Optional[LowDomain] = None,
                          budget: int = DEFAULT_BUDGET) -> Verdict:
    """Enumerate every low-equivalent variant of the initial state and
    compare sink observation sequences against the reference run."""
    domain = domain or LowDomain()
    if init is None:
        init = build_initial_state(policy.bindings)
    reference = _observe(program, init, policy, budget)
    if reference is None:
        return Verdict(VerdictKind.UNDECIDED, reason="reference run hit the budget")
    positions = _sensitive_positions(init, policy)
    env, heap = init
    per_position = []
    for kind, key in positions:
        payload = env[key].payload if kind == "env" else heap[key[0]][key[1]].payload
        per_position.append(domain.choices_for(payload))
    total = 1
    for choices in per_position:
        total *= len(choices)
    if total > MAX_VARIANTS:
        return Verdict(VerdictKind.UNDECIDED,
                       reason=f"{total} low-equivalent variants exceed the bound")
    for combo in itertools.product(*per_position):
        substitution = {positions[i]: combo[i] for i in range(len(combo))}
        variant = _variant(init, substitution)
        observed = _observe(program, variant, policy, budget)
        if observed is None:
            return Verdict(VerdictKind.UNDECIDED, reason="a variant run hit the budget")
        if observed != reference:
            return Verdict(VerdictKind.FAILS, counterexample=variant)
    return Verdict(VerdictKind.HOLDS)


def check_explicit_secrecy(program: Stmt, init: Optional[tuple], policy: Policy,
                           domain: Optional[LowDomain] = None,
                           budget: int = DEFAULT_BUDGET) -> Verdict:
    if init is None:
        init = build_initial_state(policy.bindings)
    try:
        extracted = extract_explicit(program, init, policy, budget)
    except BudgetError:
        return Verdict(VerdictKind.UNDECIDED, reason="extraction hit the budget")
    return check_noninterference(extracted, init, policy, domain, budget)


def check_observable_secrecy(program: Stmt, init: Optional[tuple], policy: Policy,
                             domain: Optional[LowDomain] = None,
                             budget: int = DEFAULT_BUDGET) -> Verdict:
    if init is None:
        init = build_initial_state(policy.bindings)
    try:
        extracted = extract_observable(program, init, policy, budget)
    except BudgetError:
        return Verdict(VerdictKind.UNDECIDED, reason="extraction hit the budget")
    return check_noninterference(extracted, init, policy, domain, budget)


# ---------------------------------------------------------------------------
# Random terminating programs
# ---------------------------------------------------------------------------

@dataclass
class GeneratedCase:
    text: str
    program: Stmt
    init: tuple
    policy: Policy


class ProgramGen:
    """Seeded generator of small, type-stable, terminating NanoJS programs.

    1-2 sensitive variables, a few insensitive ones, nesting depth at most
    2, loops bounded by literal counters.  Variables keep a fixed base
    type so every low-variant run stays well-typed.
    """

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self._loop_id = 0

    def generate(self) -> GeneratedCase:
        rng = self.rng
        n_sensitive = rng.choice((1, 2))
        types = {}
        bindings = {}
        sources = []
        for i in range(n_sensitive):
            name = f"h{i + 1}"
            ty = rng.choice(("bool", "int", "string"))
            types[name] = ty
            bindings[name] = self._literal(ty)
            sources.append(name)
        for i in range(3):
            name = f"l{i + 1}"
            ty = rng.choice(("bool", "int", "string"))
            types[name] = ty
            bindings[name] = self._literal(ty)
        lines: list = []
        self._block(lines, types, depth=0, budget=[rng.randint(3, 8)], indent="")
        if not any(line.strip().startswith("sink(") for line in lines):
            lines.append(f"sink({self._read_expr(types, rng.choice(list(types)))});")
        text = "\n".join(lines) + "\n"
        program = lang.parse(text, "<generated>")
        policy = Policy(sources=tuple(sources), strategy=Strategy.PU,
                        mode=Mode.MEASURE, bindings=bindings)
        init = build_initial_state(policy.bindings)
        return GeneratedCase(text, program, init, policy)

    def _literal(self, ty: str):
        rng = self.rng
        if ty == "bool":
            return rng.choice((True, False))
        if ty == "int":
            return rng.randint(0, 2)
        return rng.choice(("", "a", "b"))

    def _literal_text(self, ty: str) -> str:
        v = self._literal(ty)
        if ty == "bool":
            return "true" if v else "false"
        if ty == "int":
            return str(v)
        return f'"{v}"'

    def _read_expr(self, types: dict, name: str) -> str:
        return name

    def _typed_expr(self, types: dict, ty: str, depth: int = 0) -> str:
        rng = self.rng
        of_type = [n for n, t in types.items() if t == ty]
        atoms = of_type + [None]  # None stands for a literal
        pick = rng.choice(atoms)
        atom = self._literal_text(ty) if pick is None else pick
        if depth >= 1 or rng.random() < 0.4:
            return atom
        if ty == "int":
            op = rng.choice(("+", "-", "*"))
            return f"({atom} {op} {self._typed_expr(types, 'int', depth + 1)})"
        if ty == "string":
            return f"({atom} + {self._typed_expr(types, 'string', depth + 1)})"
        return self._bool_expr(types, depth + 1)

    def _bool_expr(self, types: dict, depth: int = 0) -> str:
        rng = self.rng
        kind = rng.random()
        bool_vars = [n for n, t in types.items() if t == "bool"]
        if kind < 0.4 and bool_vars:
            return rng.choice(bool_vars)
        if kind < 0.6:
            ty = rng.choice(("int", "string", "bool"))
            lhs = self._typed_expr(types, ty, max(depth, 1))
            rhs = self._typed_expr(types, ty, max(depth, 1))
            op = rng.choice(("===", "!=="))
            return f"({lhs} {op} {rhs})"
        if kind < 0.8:
            lhs = self._typed_expr(types, "int", max(depth, 1))
            rhs = self._typed_expr(types, "int", max(depth, 1))
            return f"({lhs} < {rhs})"
        if depth >= 1:
            return self._literal_text("bool")
        op = self.rng.choice(("&&", "||"))
        return f"({self._bool_expr(types, depth + 1)} {op} {self._bool_expr(types, depth + 1)})"

    def _block(self, lines: list, types: dict, depth: int, budget: list,
               indent: str) -> None:
        rng = self.rng
        emitted = 0
        while budget[0] > 0 and emitted < 5:
            budget[0] -= 1
            emitted += 1
            roll = rng.random()
            if roll < 0.45 or depth >= 2:
                name = rng.choice(list(types))
                lines.append(f"{indent}{name} = {self._typed_expr(types, types[name])};")
            elif roll < 0.65:
                lines.append(f"{indent}sink({self._typed_expr(types, rng.choice(('bool', 'int', 'string')))});")
            elif roll < 0.72:
                name = rng.choice(list(types))
                lines.append(f"{indent}upgrade({name});")
            elif roll < 0.9:
                lines.append(f"{indent}if ({self._bool_expr(types)}) {{")
                self._block(lines, types, depth + 1, budget, indent + "  ")
                if rng.random() < 0.5:
                    lines.append(f"{indent}}} else {{")
                    self._block(lines, types, depth + 1, budget, indent + "  ")
                lines.append(f"{indent}}}")
            else:
                # the counter stays out of `types` so no generated statement
                # can touch it; termination is structural
                self._loop_id += 1
                counter = f"i{self._loop_id}"
                bound = rng.randint(1, 3)
                lines.append(f"{indent}{counter} = 0;")
                lines.append(f"{indent}while ({counter} < {bound}) {{")
                self._block(lines, types, depth + 1, budget, indent + "  ")
                lines.append(f"{indent}  {counter} = {counter} + 1;")
                lines.append(f"{indent}}}")


# ---------------------------------------------------------------------------
# Theorem suite
# ---------------------------------------------------------------------------

@dataclass
class TheoremViolation:
    theorem: int
    text: str
    detail: str


@dataclass
class TheoremReport:
    total: int = 0
    t1_checked: int = 0
    t2_checked: int = 0
    undecided: int = 0
    violations: list = field(default_factory=list)

    @property
    def undecided_rate(self) -> float:
        return self.undecided / self.total if self.total else 0.0


def theorem_suite(n: int, seed: int = 0, budget: int = 20_000,
                  domain: Optional[LowDomain] = None) -> TheoremReport:
    """Soundness check over n generated runs.

    Zero explicit sink flows must imply the explicit extraction is
    noninterfering (theorem 1); zero explicit and observable sink flows
    must imply the observable extraction is (theorem 2).  Undecided
    oracle runs are counted, never treated as passes.
    """
    gen = ProgramGen(seed)
    report = TheoremReport()
    for _ in range(n):
        case = gen.generate()
        report.total += 1
        try:
            result = run(case.program, init=case.init, cfg=_MEASURE,
                         policy=case.policy, budget=budget)
        except NanoRuntimeError:
            report.undecided += 1
            continue
        if result.outcome is not Outcome.COMPLETED:
            report.undecided += 1
            continue
        sink = result.sink_count
        if sink.explicit == 0:
            verdict = check_explicit_secrecy(case.program, case.init, case.policy,
                                             domain, budget)
            if verdict.kind is VerdictKind.UNDECIDED:
                report.undecided += 1
            else:
                report.t1_checked += 1
                if not verdict.holds:
                    report.violations.append(TheoremViolation(
                        1, case.text, f"counterexample {verdict.counterexample!r}"))
        if sink.explicit == 0 and sink.observable == 0:
            verdict = check_observable_secrecy(case.program, case.init, case.policy,
                                               domain, budget)
            if verdict.kind is VerdictKind.UNDECIDED:
                report.undecided += 1
            else:
                report.t2_checked += 1
                if not verdict.holds:
                    report.violations.append(TheoremViolation(
                        2, case.text, f"counterexample {verdict.counterexample!r}"))
    return report
