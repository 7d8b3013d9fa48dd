"""Small-step monitored interpreter for NanoJS with flow counting.

Every value carries a security label (L, H, or P for partially leaked)
and a flow-count triple.  The interpreter tallies micro flows via the
delta function, maintains a security stack of guard labels, emits an
iFlow trace, and implements four monitoring strategies:

    taint       labels propagate through data only; the stack is kept for
                reporting but never raises a written value's label
    observable  written values are raised by the join of the open guards
    nsu         like observable, but writing over an insensitive value in
                a sensitive context is a violation (a stop when enforced)
    pu          the same write marks the value partially leaked (P); any
                later read of a P value is the violation

In Enforce mode a violation stops the run; in Measure mode it is logged
and execution continues so the remainder of the run is still counted.

Value ids are minted when a value is constructed during execution;
values bound before the program starts receive an id lazily, the first
time a trace event mentions them.  A label change (insensitive to
sensitive or back) mints a fresh id; count changes and partial-leak
marks are bookkeeping and keep the id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Optional, Union

from . import lang
from .lang import (Assign, AssignField, BinOp, Expr, FieldAccess, If, Lit, Loc,
                   MarkSrc, NewObject, Not, Seq, Sink, Skip, Stmt, Upgrade, Var,
                   While, desugar_while, INT_MAX, INT_MIN)
from .traceanalysis import (OpEvent, PopEvent, PushEvent, SinkEvent, SourceEvent,
                            Trace, UpgradeEvent, ValueInfo, WriteEvent)

DEFAULT_BUDGET = 1_000_000


# ---------------------------------------------------------------------------
# Labels and flow counts
# ---------------------------------------------------------------------------

class Label(Enum):
    L = "L"
    H = "H"
    P = "P"  # partially leaked; sensitive, only ever minted by the PU strategy

    def __str__(self) -> str:
        return self.value


def sensitive(label: Label) -> bool:
    return label is not Label.L


def join_labels(a: Label, b: Label) -> Label:
    if Label.P in (a, b):
        return Label.P
    if Label.H in (a, b):
        return Label.H
    return Label.L


@dataclass(frozen=True)
class FlowCount:
    explicit: int = 0
    observable: int = 0
    hidden: int = 0

    def __add__(self, other: "FlowCount") -> "FlowCount":
        return FlowCount(self.explicit + other.explicit,
                         self.observable + other.observable,
                         self.hidden + other.hidden)

    def join(self, other: "FlowCount") -> "FlowCount":
        return self + other

    def leq(self, other: "FlowCount") -> bool:
        """kappa1 <= kappa2 iff kappa2 being zero forces kappa1 to be zero."""
        return self.is_zero() or not other.is_zero()

    def is_zero(self) -> bool:
        return self.explicit == 0 and self.observable == 0 and self.hidden == 0

    def as_tuple(self) -> tuple:
        return (self.explicit, self.observable, self.hidden)

    def as_dict(self) -> dict:
        return {"explicit": self.explicit, "observable": self.observable,
                "hidden": self.hidden}


ZERO = FlowCount()


def delta(label_old: Label, label_new: Label, stack: Iterable[Label]) -> FlowCount:
    """Explicit/observable increments for writing a value labeled
    `label_new` over a location labeled `label_old` under the given
    security stack; the hidden component is never incremented here."""
    d_e = 1 if sensitive(label_new) and not sensitive(label_old) else 0
    d_o = 1 if not sensitive(label_old) and any(sensitive(l) for l in stack) else 0
    return FlowCount(d_e, d_o, 0)


# ---------------------------------------------------------------------------
# Values and heap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Addr:
    index: int

    def __str__(self) -> str:
        return f"@{self.index}"


Payload = Union[bool, int, str, Addr]


@dataclass
class Value:
    payload: Payload
    label: Label = Label.L
    count: FlowCount = ZERO
    vid: Optional[int] = None  # None until the value participates in the trace

    def render(self) -> str:
        if isinstance(self.payload, bool):
            return "true" if self.payload else "false"
        if isinstance(self.payload, Addr):
            return str(self.payload)
        if isinstance(self.payload, str):
            return '"' + self.payload.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return str(self.payload)


def type_tag(payload: Payload) -> str:
    if isinstance(payload, bool):
        return "bool"
    if isinstance(payload, Addr):
        return "addr"
    if isinstance(payload, int):
        return "int"
    return "string"


# ---------------------------------------------------------------------------
# Strategies, policies, results
# ---------------------------------------------------------------------------

class Strategy(Enum):
    TAINT = "taint"
    OBSERVABLE = "observable"
    NSU = "nsu"
    PU = "pu"


class Mode(Enum):
    ENFORCE = "enforce"
    MEASURE = "measure"


@dataclass(frozen=True)
class StrategyConfig:
    strategy: Strategy
    mode: Mode


class StopReason(Enum):
    NSU_WRITE = "NSUWrite"
    PU_USE = "PUUse"
    SINK_VIOLATION = "SinkViolation"


@dataclass(frozen=True)
class Violation:
    reason: StopReason
    loc: Loc
    var: Optional[str] = None


class Outcome(Enum):
    COMPLETED = "completed"
    STOPPED = "stopped"
    BUDGET_EXHAUSTED = "budget-exhausted"


@dataclass(frozen=True)
class Policy:
    """Declared sources plus initial variable bindings.

    Sources are variable names raised to H before the first step (a
    synthetic source event is emitted for each, mirroring markSrc).
    Sinks are always the dedicated sink statement.
    """
    sources: tuple = ()
    strategy: Strategy = Strategy.PU
    mode: Mode = Mode.MEASURE
    bindings: dict = field(default_factory=dict)  # name -> python literal / dict

    @property
    def config(self) -> StrategyConfig:
        return StrategyConfig(self.strategy, self.mode)

    @staticmethod
    def from_json(obj: dict) -> "Policy":
        """Policy file format:

            {"sources": ["passwd"], "strategy": "pu", "mode": "measure",
             "env": {"passwd": {"value": "topSecret", "label": "H"},
                     "gotIt": {"value": false},
                     "box": {"value": {"a": 5}}}}

        A binding is a scalar, a {"value":..., "label":...} node, or a
        plain object mapping field names to bindings.  Naming a variable
        in `sources` and giving it label H are equivalent; both raise it
        before the first step with a synthetic source event.
        """
        sources = list(obj.get("sources", ()))
        bindings = {}
        for name, node in obj.get("env", {}).items():
            value, is_high = _binding_from_json(node)
            bindings[name] = value
            if is_high and name not in sources:
                sources.append(name)
        return Policy(
            sources=tuple(sources),
            strategy=Strategy(obj.get("strategy", "pu")),
            mode=Mode(obj.get("mode", "measure")),
            bindings=bindings,
        )

    def merged_env(self, test_obj: dict) -> "Policy":
        """A copy with a test case's {"env": {...}} merged over the bindings."""
        sources = list(self.sources)
        bindings = dict(self.bindings)
        for name, node in test_obj.get("env", {}).items():
            value, is_high = _binding_from_json(node)
            bindings[name] = value
            if is_high and name not in sources:
                sources.append(name)
        return Policy(tuple(sources), self.strategy, self.mode, bindings)


def _binding_from_json(node) -> tuple:
    """Returns (binding value, marked high?)."""
    if isinstance(node, dict) and "value" in node:
        label = node.get("label", "L")
        if label not in ("L", "H"):
            raise ValueError(f"binding label must be L or H, not {label!r}")
        inner, _ = _binding_from_json(node["value"])
        return inner, label == "H"
    if isinstance(node, dict):
        fields = {}
        for fname, sub in node.items():
            inner, is_high = _binding_from_json(sub)
            fields[fname] = (inner, Label.H) if is_high else inner
        return fields, False
    if isinstance(node, (bool, int, str)):
        return node, False
    raise ValueError(f"cannot bind {node!r}")


@dataclass
class RunResult:
    outcome: Outcome
    stop: Optional[Violation]
    trace: Trace
    counters: FlowCount          # global micro-flow tallies (c_E, c_O, c_H)
    sink_count: FlowCount        # accumulated at sink statements
    assign_log: list             # (Loc, written value sensitive)
    branch_log: list             # (Loc, guard sensitive, guard was true)
    violations: list             # every Violation observed (Measure keeps going)
    sink_log: list               # (Loc, FlowCount contribution, arg sensitive)
    observations: list           # frozenset of (base, field-path) per sink
    env: dict
    heap: dict
    steps_used: int
    final_stack_depth: int


# ---------------------------------------------------------------------------
# Runtime errors
# ---------------------------------------------------------------------------

class NanoRuntimeError(Exception):
    def __init__(self, loc: Loc, message: str):
        super().__init__(f"{loc}: {message}")
        self.loc = loc
        self.message = message


class UnboundName(NanoRuntimeError):
    def __init__(self, name: str, loc: Loc):
        super().__init__(loc, f"unbound name {name!r}")
        self.name = name


class NoSuchField(NanoRuntimeError):
    def __init__(self, addr: Addr, fld: str, loc: Loc):
        super().__init__(loc, f"no field {fld!r} on {addr}")
        self.field = fld


class TypeMismatch(NanoRuntimeError):
    pass


class Overflow(NanoRuntimeError):
    pass


class CyclicHeap(NanoRuntimeError):
    pass


class StepBudgetExhausted(Exception):
    pass


# ---------------------------------------------------------------------------
# Reachability over the heap
# ---------------------------------------------------------------------------

def _reachable_values(value: Value, heap: dict) -> list:
    """The value itself followed by every field value reachable through the
    heap, depth-first in field insertion order."""
    out = []
    seen_addrs = set()

    def walk(v: Value) -> None:
        out.append(v)
        if isinstance(v.payload, Addr):
            if v.payload in seen_addrs:
                raise CyclicHeap(Loc("<heap>", 1, 1), f"cycle through {v.payload}")
            seen_addrs.add(v.payload)
            for fv in heap[v.payload].values():
                walk(fv)
            seen_addrs.discard(v.payload)

    walk(value)
    return out


def reach_join_label(value: Value, heap: dict) -> Label:
    out = Label.L
    for v in _reachable_values(value, heap):
        out = join_labels(out, v.label)
    return out


def reach_join_count(value: Value, heap: dict) -> FlowCount:
    out = ZERO
    for v in _reachable_values(value, heap):
        out = out + v.count
    return out


def to_val(heap: dict, value: Value) -> frozenset:
    """Flatten a value into (base payload, field path) observations."""
    out = set()

    def walk(v: Value, path: tuple, seen: frozenset) -> None:
        if isinstance(v.payload, Addr):
            if v.payload in seen:
                raise CyclicHeap(Loc("<heap>", 1, 1), f"cycle through {v.payload}")
            for name, fv in heap[v.payload].items():
                walk(fv, path + (name,), seen | {v.payload})
        else:
            out.add((v.payload, path))

    walk(value, (), frozenset())
    return frozenset(out)


# ---------------------------------------------------------------------------
# Observers (extraction hooks)
# ---------------------------------------------------------------------------

class Observer:
    """Callbacks fired by the interpreter; used by the secrecy extractions."""

    def on_stmt(self, stmt: Stmt) -> None:  # executed assign/assignField/sink
        pass

    def on_branch(self, stmt: If, taken: bool) -> None:
        pass

    def on_pop(self) -> None:
        pass


# ---------------------------------------------------------------------------
# The machine
# ---------------------------------------------------------------------------

@dataclass
class _StackEntry:
    label: Label
    vid: Optional[int]
    emitted: bool


class _PopFrame:
    __slots__ = ("loc",)

    def __init__(self, loc: Loc):
        self.loc = loc


class Machine:
    def __init__(self, program: Stmt, env: dict, heap: dict, cfg: StrategyConfig,
                 budget: int = DEFAULT_BUDGET, observer: Optional[Observer] = None,
                 upgrades: Optional[dict] = None,
                 nsu_exempt_locs: Iterable[Loc] = (),
                 sink_stops: bool = True,
                 program_name: str = "<program>"):
        self.cfg = cfg
        self.env = env
        self.heap = heap
        self.stack: list = []
        self.frames: list = [program]
        self.budget = budget
        self.steps_used = 0
        self.observer = observer or Observer()
        self.upgrades = upgrades or {}
        self.nsu_exempt_locs = set(nsu_exempt_locs)
        self.sink_stops = sink_stops
        self.counters = ZERO
        self.sink_count = ZERO
        self.assign_log: list = []
        self.branch_log: list = []
        self.violations: list = []
        self.sink_log: list = []
        self.observations: list = []
        self.trace = Trace(meta={"program": program_name,
                                 "strategy": cfg.strategy.value})
        self._next_vid = 1
        self._next_addr = 1
        self.stop: Optional[Violation] = None

    # -- value construction and trace bookkeeping --------------------------

    def new_value(self, payload: Payload, label: Label = Label.L,
                  count: FlowCount = ZERO) -> Value:
        v = Value(payload, label, count, self._next_vid)
        self._next_vid += 1
        return v

    def fresh_addr(self) -> Addr:
        a = Addr(self._next_addr)
        self._next_addr += 1
        return a

    def vid_of(self, value: Value) -> int:
        if value.vid is None:
            value.vid = self._next_vid
            self._next_vid += 1
        self.trace.values.setdefault(value.vid,
                                     ValueInfo(value.render(), value.label.value))
        return value.vid

    def _emit(self, event) -> None:
        self.trace.events.append(event)

    # -- helpers ------------------------------------------------------------

    @property
    def pu(self) -> bool:
        return self.cfg.strategy is Strategy.PU

    def pc_label(self) -> Label:
        out = Label.L
        for entry in self.stack:
            out = join_labels(out, entry.label)
        return out

    def stack_labels(self) -> list:
        return [entry.label for entry in self.stack]

    def _violate(self, reason: StopReason, loc: Loc, var: Optional[str] = None) -> None:
        violation = Violation(reason, loc, var)
        self.violations.append(violation)
        if self.cfg.mode is Mode.ENFORCE:
            if reason is StopReason.SINK_VIOLATION and not self.sink_stops:
                return
            if reason is StopReason.NSU_WRITE and loc in self.nsu_exempt_locs:
                return
            self.stop = violation

    class _Stopped(Exception):
        pass

    def _check_p_read(self, value: Value, name: str, loc: Loc) -> None:
        if value.label is Label.P and self.pu:
            self._violate(StopReason.PU_USE, loc, name)
            if self.stop is not None:
                raise Machine._Stopped()

    # -- expression evaluation ----------------------------------------------

    def read_var(self, name: str, loc: Loc) -> Value:
        if name not in self.env:
            raise UnboundName(name, loc)
        value = self.env[name]
        self._check_p_read(value, name, loc)
        return value

    def eval_expr(self, expr: Expr, loc: Loc) -> Value:
        if isinstance(expr, Lit):
            return self.new_value(expr.value)
        if isinstance(expr, Var):
            return self.read_var(expr.name, loc)
        if isinstance(expr, FieldAccess):
            ref = self.read_var(expr.obj, loc)
            if not isinstance(ref.payload, Addr):
                raise TypeMismatch(loc, f"{expr.obj} is not an object")
            record = self.heap[ref.payload]
            if expr.field not in record:
                raise NoSuchField(ref.payload, expr.field, loc)
            fv = record[expr.field]
            # a partially leaked field is cured by upgrading the root variable
            self._check_p_read(fv, expr.obj, loc)
            label = join_labels(fv.label, ref.label)
            count = fv.count + ref.count
            if label is fv.label and count == fv.count:
                return fv
            result = self.new_value(fv.payload, label, count) \
                if sensitive(label) != sensitive(fv.label) else \
                Value(fv.payload, label, count, fv.vid)
            return result
        if isinstance(expr, Not):
            operand = self.eval_expr(expr.operand, loc)
            if not isinstance(operand.payload, bool):
                raise TypeMismatch(loc, "! expects a boolean")
            result = self.new_value(not operand.payload, operand.label, operand.count)
            if sensitive(result.label):
                self._emit(OpEvent(self.vid_of(operand), None, self.vid_of(result), loc))
            return result
        if isinstance(expr, BinOp):
            lhs = self.eval_expr(expr.lhs, loc)
            rhs = self.eval_expr(expr.rhs, loc)
            payload = self._apply_binop(expr.op, lhs, rhs, loc)
            result = self.new_value(payload, join_labels(lhs.label, rhs.label),
                                    lhs.count + rhs.count)
            if sensitive(result.label):
                self._emit(OpEvent(self.vid_of(lhs), self.vid_of(rhs),
                                   self.vid_of(result), loc))
            return result
        if isinstance(expr, NewObject):
            record = {}
            for name, sub in expr.fields:
                record[name] = self.eval_expr(sub, loc)
            addr = self.fresh_addr()
            self.heap[addr] = record
            return self.new_value(addr)
        raise AssertionError(f"unhandled expression {expr!r}")

    def _apply_binop(self, op: str, lhs: Value, rhs: Value, loc: Loc) -> Payload:
        a, b = lhs.payload, rhs.payload
        ta, tb = type_tag(a), type_tag(b)
        if op in ("+", "-", "*"):
            if op == "+" and ta == tb == "string":
                return a + b
            if ta == tb == "int":
                out = {"+": a + b, "-": a - b, "*": a * b}[op]
                if not (INT_MIN <= out <= INT_MAX):
                    raise Overflow(loc, f"integer overflow in {op}")
                return out
            raise TypeMismatch(loc, f"{op} not defined on {ta} and {tb}")
        if op in ("===", "!=="):
            eq = (ta == tb) and a == b
            return eq if op == "===" else not eq
        if op == "<":
            if ta == tb == "int":
                return a < b
            raise TypeMismatch(loc, f"< not defined on {ta} and {tb}")
        if op in ("&&", "||"):
            if ta == tb == "bool":
                return (a and b) if op == "&&" else (a or b)
            raise TypeMismatch(loc, f"{op} expects booleans")
        raise AssertionError(f"unhandled operator {op!r}")

    # -- label politics for writes ------------------------------------------

    def _written_value(self, value: Value, old_label: Label, d: FlowCount,
                       loc: Loc, var: Optional[str]) -> Optional[Value]:
        """Apply the strategy's labeling to a value about to be stored.
        Returns None when an enforced NSU stop aborts the write."""
        pc = self.pc_label()
        new_count = value.count + d
        if self.cfg.strategy is Strategy.TAINT:
            new_label = value.label
        else:
            new_label = join_labels(value.label, pc)
            if sensitive(pc) and not sensitive(old_label):
                if self.cfg.strategy is Strategy.NSU:
                    self._violate(StopReason.NSU_WRITE, loc, var)
                    if self.stop is not None:
                        return None
                elif self.pu:
                    new_label = Label.P
        if sensitive(new_label) != sensitive(value.label):
            # recycle the id of an unreferenced transient (e.g. a literal
            # raised by the context before anything could mention it)
            if value.vid == self._next_vid - 1 and value.vid not in self.trace.values:
                self._next_vid -= 1
            return self.new_value(value.payload, new_label, new_count)
        return Value(value.payload, new_label, new_count, value.vid)

    def _record_write(self, old: Optional[Value], new: Value, loc: Loc) -> None:
        if sensitive(new.label):
            old_vid = self.vid_of(old) if old is not None else None
            self._emit(WriteEvent(old_vid, self.vid_of(new), loc))

    # -- statement dispatch ---------------------------------------------------

    def step(self) -> bool:
        """Execute one small-step rule.  Returns False once the focus is
        empty or the run has stopped."""
        if self.stop is not None or not self.frames:
            return False
        if self.steps_used >= self.budget:
            raise StepBudgetExhausted()
        self.steps_used += 1
        frame = self.frames.pop()
        try:
            if isinstance(frame, _PopFrame):
                entry = self.stack.pop()
                if entry.emitted:
                    self._emit(PopEvent(frame.loc))
                self.observer.on_pop()
                return True
            self._dispatch(frame)
        except Machine._Stopped:
            pass
        return self.stop is None

    def _dispatch(self, stmt: Stmt) -> None:
        for var in self.upgrades.get(stmt.loc, ()) if hasattr(stmt, "loc") else ():
            self.exec_upgrade(var, stmt.loc)
            if self.stop is not None:
                return
        if isinstance(stmt, Skip):
            return
        if isinstance(stmt, Seq):
            self.frames.append(stmt.second)
            self.frames.append(stmt.first)
            return
        if isinstance(stmt, Assign):
            self.exec_assign(stmt)
        elif isinstance(stmt, AssignField):
            self.exec_assign_field(stmt)
        elif isinstance(stmt, If):
            self.exec_if(stmt)
        elif isinstance(stmt, While):
            self.frames.append(desugar_while(stmt))
        elif isinstance(stmt, Sink):
            self.exec_sink(stmt)
        elif isinstance(stmt, Upgrade):
            self.exec_upgrade(stmt.target, stmt.loc)
        elif isinstance(stmt, MarkSrc):
            self.exec_mark_src(stmt.target, stmt.loc)
        else:
            raise AssertionError(f"unhandled statement {stmt!r}")

    def exec_assign(self, stmt: Assign) -> None:
        old = self.env.get(stmt.target)
        old_label = reach_join_label(old, self.heap) if old is not None else Label.L
        value = self.eval_expr(stmt.rhs, stmt.loc)
        d = delta(old_label, value.label, self.stack_labels())
        written = self._written_value(value, old_label, d, stmt.loc, stmt.target)
        if written is None:
            return
        self.env[stmt.target] = written
        self.counters = self.counters + d
        self.assign_log.append((stmt.loc, sensitive(written.label)))
        self._record_write(old, written, stmt.loc)
        self.observer.on_stmt(stmt)

    def exec_assign_field(self, stmt: AssignField) -> None:
        ref = self.read_var(stmt.obj, stmt.loc)
        if not isinstance(ref.payload, Addr):
            raise TypeMismatch(stmt.loc, f"{stmt.obj} is not an object")
        record = self.heap[ref.payload]
        old = record.get(stmt.field)
        old_label = reach_join_label(old, self.heap) if old is not None else Label.L
        value = self.eval_expr(stmt.rhs, stmt.loc)
        if isinstance(value.payload, Addr):
            reachable = {v.payload for v in _reachable_values(value, self.heap)
                         if isinstance(v.payload, Addr)}
            if ref.payload in reachable:
                raise CyclicHeap(stmt.loc, f"storing {value.payload} into "
                                           f"{ref.payload} would create a cycle")
        d = delta(old_label, value.label, self.stack_labels())
        written = self._written_value(value, old_label, d, stmt.loc,
                                      f"{stmt.obj}.{stmt.field}")
        if written is None:
            return
        record[stmt.field] = written
        self.counters = self.counters + d
        self.assign_log.append((stmt.loc, sensitive(written.label)))
        self._record_write(old, written, stmt.loc)
        self.observer.on_stmt(stmt)

    def exec_if(self, stmt: If) -> None:
        guard = self.eval_expr(stmt.guard, stmt.loc)
        if not isinstance(guard.payload, bool):
            raise TypeMismatch(stmt.loc, "condition must be a boolean")
        taken = stmt.then_branch if guard.payload else stmt.else_branch
        self.branch_log.append((stmt.loc, sensitive(guard.label), guard.payload))
        emit = sensitive(guard.label) and not lang.is_effectively_skip(taken)
        entry = _StackEntry(guard.label, None, emit)
        if emit:
            entry.vid = self.vid_of(guard)
            self._emit(PushEvent(entry.vid, stmt.loc))
        self.stack.append(entry)
        self.frames.append(_PopFrame(stmt.loc))
        self.frames.append(taken)
        self.observer.on_branch(stmt, guard.payload)

    def exec_sink(self, stmt: Sink) -> None:
        value = self.eval_expr(stmt.arg, stmt.loc)
        reachable = _reachable_values(value, self.heap)
        if self.pu and self.cfg.mode is Mode.ENFORCE:
            for v in reachable:
                if v.label is Label.P:
                    self._violate(StopReason.PU_USE, stmt.loc, _root_name(stmt.arg))
                    if self.stop is not None:
                        return
                    break
        arg_label = reach_join_label(value, self.heap)
        arg_count = reach_join_count(value, self.heap)
        contribution = arg_count + delta(Label.L, arg_label, self.stack_labels())
        self.sink_count = self.sink_count + contribution
        self.sink_log.append((stmt.loc, contribution, sensitive(arg_label)))
        self.observations.append(to_val(self.heap, value))
        for v in reachable:
            if sensitive(v.label):
                self._emit(SinkEvent(self.vid_of(v), stmt.loc))
        self.observer.on_stmt(stmt)
        if sensitive(arg_label):
            self._violate(StopReason.SINK_VIOLATION, stmt.loc, _root_name(stmt.arg))

    def _raise_reachable(self, name: str, loc: Loc, as_source: bool) -> None:
        """Shared body of markSrc and upgrade: raise the variable's value and
        everything reachable to H.  markSrc emits a source event for every
        reachable value and leaves counts alone; upgrade emits an upgrade
        event and a hidden increment only for values that were L, and clears
        partial-leak marks."""
        if name not in self.env:
            raise UnboundName(name, loc)

        def raise_value(v: Value) -> Value:
            if v.label is Label.L:
                if as_source:
                    out = self.new_value(v.payload, Label.H, v.count)
                    self._emit(SourceEvent(self.vid_of(out), loc))
                else:
                    out = self.new_value(v.payload, Label.H,
                                         v.count + FlowCount(0, 0, 1))
                    self.counters = self.counters + FlowCount(0, 0, 1)
                    self._emit(UpgradeEvent(self.vid_of(v), self.vid_of(out), loc))
                return out
            if as_source:
                self._emit(SourceEvent(self.vid_of(v), loc))
                return v
            if v.label is Label.P:
                return Value(v.payload, Label.H, v.count, v.vid)
            return v

        seen_addrs = set()

        def walk_record(addr: Addr) -> None:
            if addr in seen_addrs:
                raise CyclicHeap(loc, f"cycle through {addr}")
            seen_addrs.add(addr)
            record = self.heap[addr]
            for fname in list(record):
                record[fname] = raise_value(record[fname])
                if isinstance(record[fname].payload, Addr):
                    walk_record(record[fname].payload)

        self.env[name] = raise_value(self.env[name])
        if isinstance(self.env[name].payload, Addr):
            walk_record(self.env[name].payload)

    def exec_upgrade(self, name: str, loc: Loc) -> None:
        self._raise_reachable(name, loc, as_source=False)

    def exec_mark_src(self, name: str, loc: Loc) -> None:
        self._raise_reachable(name, loc, as_source=True)


def _root_name(expr: Expr) -> Optional[str]:
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, FieldAccess):
        return expr.obj
    return None


# ---------------------------------------------------------------------------
# Initial state construction
# ---------------------------------------------------------------------------

def build_initial_state(bindings: dict) -> tuple:
    """Turn plain-python bindings into an (env, heap) pair.

    A binding value is a scalar, a (payload, Label) tuple, or a dict for a
    heap object whose entries are themselves bindings.  Values created
    here carry no value id; ids are minted lazily if the trace mentions
    them.
    """
    heap: dict = {}
    counter = [1]

    def build(value) -> Value:
        if isinstance(value, tuple) and len(value) == 2 and isinstance(value[1], Label):
            inner = build(value[0])
            inner.label = value[1]
            return inner
        if isinstance(value, dict):
            addr = Addr(counter[0])
            counter[0] += 1
            heap[addr] = {name: build(sub) for name, sub in value.items()}
            return Value(addr)
        if isinstance(value, (bool, int, str)):
            return Value(value)
        raise TypeError(f"cannot bind {value!r}")

    env = {name: build(value) for name, value in bindings.items()}
    return env, heap


def run(program: Stmt, init: Optional[tuple] = None,
        cfg: Optional[StrategyConfig] = None,
        policy: Optional[Policy] = None,
        budget: int = DEFAULT_BUDGET,
        observer: Optional[Observer] = None,
        upgrades: Optional[dict] = None,
        nsu_exempt_locs: Iterable[Loc] = (),
        sink_stops: bool = True,
        program_name: str = "<program>") -> RunResult:
    """Drive the machine to termination.

    `init` is an (env, heap) pair as produced by `build_initial_state`;
    when omitted it is built from the policy bindings.  Policy sources are
    raised to H before the first step, emitting one synthetic source event
    per reachable value.  The `upgrades` map (Loc -> variable names) is
    applied by location interception: the listed upgrades execute every
    time the statement at that location comes into focus.
    """
    policy = policy or Policy()
    cfg = cfg or policy.config
    if init is None:
        init = build_initial_state(policy.bindings)
    # Copy the initial state so one init can seed many runs: lazy vid
    # minting mutates Value objects, which must stay private to a run.
    src_env, src_heap = init
    env = {name: Value(v.payload, v.label, v.count, v.vid)
           for name, v in src_env.items()}
    heap = {addr: {fname: Value(v.payload, v.label, v.count, v.vid)
                   for fname, v in record.items()}
            for addr, record in src_heap.items()}
    machine = Machine(program, env, heap, cfg, budget=budget, observer=observer,
                      upgrades=upgrades, nsu_exempt_locs=nsu_exempt_locs,
                      sink_stops=sink_stops, program_name=program_name)
    machine._next_addr = max((a.index for a in heap), default=0) + 1
    for idx, name in enumerate(policy.sources, start=1):
        machine.exec_mark_src(name, Loc("<policy>", 1, idx))
    outcome = Outcome.COMPLETED
    try:
        while machine.step():
            pass
        if machine.stop is not None:
            outcome = Outcome.STOPPED
    except StepBudgetExhausted:
        outcome = Outcome.BUDGET_EXHAUSTED
    return RunResult(
        outcome=outcome,
        stop=machine.stop,
        trace=machine.trace,
        counters=machine.counters,
        sink_count=machine.sink_count,
        assign_log=machine.assign_log,
        branch_log=machine.branch_log,
        violations=machine.violations,
        sink_log=machine.sink_log,
        observations=machine.observations,
        env=machine.env,
        heap=machine.heap,
        steps_used=machine.steps_used,
        final_stack_depth=len(machine.stack),
    )
