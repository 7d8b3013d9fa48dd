"""iFlow traces: data model, JSONL serialization, and offline analyses.

A trace is an ordered list of events over unique value ids:

    source(v, loc)            value marked sensitive
    sink(v, loc)              sensitive value reached a sink
    write(old|None, new, loc) variable or field write
    op(a1, a2|None, new, loc) binary or unary operation
    upgrade(old, new, loc)    explicit label raise of an insensitive value
    push(v, loc) / pop(loc)   security-stack updates for sensitive guards

Offline interpretation replays a trace against a tagged-value set and
counts explicit, observable-implicit, and hidden-implicit micro flows.
The event dependence graph connects producers of value ids to their
consumers (plus push-to-body control edges) and underpins the extraction
of source-to-sink subtraces.

File format is JSON Lines: a meta header, one event per line, then one
`val` line per value id (rendering and label, for diagnostics).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .lang import Loc


class MalformedTrace(Exception):
    pass


class FormatError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class NoSuchLocation(Exception):
    pass


class EmptySubtrace(Exception):
    pass


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceEvent:
    v: int
    loc: Loc
    kind = "source"


@dataclass(frozen=True)
class SinkEvent:
    v: int
    loc: Loc
    kind = "sink"


@dataclass(frozen=True)
class WriteEvent:
    old: Optional[int]  # None encodes the non-existing value
    new: int
    loc: Loc
    kind = "write"


@dataclass(frozen=True)
class OpEvent:
    a1: int
    a2: Optional[int]  # None for unary operations
    new: int
    loc: Loc
    kind = "op"


@dataclass(frozen=True)
class UpgradeEvent:
    old: int
    new: int
    loc: Loc
    kind = "upgrade"


@dataclass(frozen=True)
class PushEvent:
    v: int
    loc: Loc
    kind = "push"


@dataclass(frozen=True)
class PopEvent:
    loc: Loc
    kind = "pop"


Event = object  # any of the event classes above


@dataclass(frozen=True)
class ValueInfo:
    show: str
    label: str  # "L" | "H" | "P"


@dataclass
class Trace:
    events: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # vid -> ValueInfo
    meta: dict = field(default_factory=dict)

    def referenced_vids(self) -> set:
        out = set()
        for e in self.events:
            for attr in ("v", "old", "new", "a1", "a2"):
                vid = getattr(e, attr, None)
                if vid is not None:
                    out.add(vid)
        return out

    def validate(self) -> None:
        depth = 0
        for e in self.events:
            if isinstance(e, PushEvent):
                depth += 1
            elif isinstance(e, PopEvent):
                depth -= 1
                if depth < 0:
                    raise MalformedTrace("pop without matching push")
        if depth != 0:
            raise MalformedTrace(f"unbalanced push/pop ({depth} left open)")
        if self.values:
            missing = self.referenced_vids() - set(self.values)
            if missing:
                raise MalformedTrace(f"unknown value ids {sorted(missing)}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _event_to_json(e: Event) -> dict:
    if isinstance(e, SourceEvent):
        return {"k": "source", "v": e.v, "loc": str(e.loc)}
    if isinstance(e, SinkEvent):
        return {"k": "sink", "v": e.v, "loc": str(e.loc)}
    if isinstance(e, WriteEvent):
        return {"k": "write", "old": e.old, "new": e.new, "loc": str(e.loc)}
    if isinstance(e, OpEvent):
        return {"k": "op", "a1": e.a1, "a2": e.a2, "new": e.new, "loc": str(e.loc)}
    if isinstance(e, UpgradeEvent):
        return {"k": "upgrade", "old": e.old, "new": e.new, "loc": str(e.loc)}
    if isinstance(e, PushEvent):
        return {"k": "push", "v": e.v, "loc": str(e.loc)}
    if isinstance(e, PopEvent):
        return {"k": "pop", "loc": str(e.loc)}
    raise AssertionError(f"unhandled event {e!r}")


def write_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"k": "meta", "version": 1}
        meta.update(trace.meta)
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for e in trace.events:
            fh.write(json.dumps(_event_to_json(e), sort_keys=True) + "\n")
        for vid in sorted(trace.values):
            info = trace.values[vid]
            fh.write(json.dumps({"k": "val", "id": vid, "label": info.label,
                                 "show": info.show}, sort_keys=True) + "\n")


def _require(obj: dict, keys: Iterable[str], lineno: int) -> None:
    for key in keys:
        if key not in obj:
            raise FormatError(lineno, f"missing field {key!r}")


def read_trace(path) -> Trace:
    trace = Trace()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(1, "empty trace file (missing meta header)")
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(lineno, f"bad JSON: {exc.msg}") from exc
        kind = obj.get("k")
        if lineno == 1:
            if kind != "meta":
                raise FormatError(1, "first line must be the meta header")
            trace.meta = {k: v for k, v in obj.items() if k not in ("k", "version")}
            continue
        try:
            if kind == "source":
                _require(obj, ("v", "loc"), lineno)
                trace.events.append(SourceEvent(obj["v"], Loc.parse(obj["loc"])))
            elif kind == "sink":
                _require(obj, ("v", "loc"), lineno)
                trace.events.append(SinkEvent(obj["v"], Loc.parse(obj["loc"])))
            elif kind == "write":
                _require(obj, ("old", "new", "loc"), lineno)
                trace.events.append(WriteEvent(obj["old"], obj["new"], Loc.parse(obj["loc"])))
            elif kind == "op":
                _require(obj, ("a1", "a2", "new", "loc"), lineno)
                trace.events.append(OpEvent(obj["a1"], obj["a2"], obj["new"], Loc.parse(obj["loc"])))
            elif kind == "upgrade":
                _require(obj, ("old", "new", "loc"), lineno)
                trace.events.append(UpgradeEvent(obj["old"], obj["new"], Loc.parse(obj["loc"])))
            elif kind == "push":
                _require(obj, ("v", "loc"), lineno)
                trace.events.append(PushEvent(obj["v"], Loc.parse(obj["loc"])))
            elif kind == "pop":
                _require(obj, ("loc",), lineno)
                trace.events.append(PopEvent(Loc.parse(obj["loc"])))
            elif kind == "val":
                _require(obj, ("id", "label", "show"), lineno)
                trace.values[obj["id"]] = ValueInfo(obj["show"], obj["label"])
            elif kind == "meta":
                raise FormatError(lineno, "duplicate meta header")
            else:
                raise FormatError(lineno, f"unknown event kind {kind!r}")
        except (ValueError, TypeError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(lineno, f"malformed record: {exc}") from exc
    return trace


# ---------------------------------------------------------------------------
# Trace interpretation (tagged-set micro-flow counting)
# ---------------------------------------------------------------------------

@dataclass
class InterpretResult:
    explicit: int
    observable: int
    hidden: int
    snapshots: list  # (explicit, observable, hidden) after each event

    @property
    def counters(self) -> tuple:
        return (self.explicit, self.observable, self.hidden)


def interpret_trace(trace: Trace) -> InterpretResult:
    """Replay a trace, maintaining the tagged set S and the security stack.

    A write counts an explicit flow when an untagged value is overwritten
    by an already-tagged one, and an observable flow when an untagged value
    is overwritten under a non-empty stack.  Every upgrade counts a hidden
    flow.  Results of source/op/write/upgrade events become tagged; sink
    events do not affect the counters.  Membership of the written value is
    tested against S before the event tags it.
    """
    trace.validate()
    tagged = set()
    stack = []
    c_e = c_o = c_h = 0
    snapshots = []
    for e in trace.events:
        if isinstance(e, SourceEvent):
            tagged.add(e.v)
        elif isinstance(e, WriteEvent):
            old_tagged = e.old is not None and e.old in tagged
            if not old_tagged and e.new in tagged:
                c_e += 1
            if not old_tagged and stack:
                c_o += 1
            tagged.add(e.new)
        elif isinstance(e, OpEvent):
            tagged.add(e.new)
        elif isinstance(e, UpgradeEvent):
            c_h += 1
            tagged.add(e.new)
        elif isinstance(e, PushEvent):
            stack.append(e.v)
        elif isinstance(e, PopEvent):
            stack.pop()
        elif isinstance(e, SinkEvent):
            pass
        else:
            raise MalformedTrace(f"unknown event {e!r}")
        snapshots.append((c_e, c_o, c_h))
    return InterpretResult(c_e, c_o, c_h, snapshots)


# ---------------------------------------------------------------------------
# Event dependence graph
# ---------------------------------------------------------------------------

@dataclass
class EventDependenceGraph:
    n: int
    edges: set          # (producer index, consumer index), data edges
    control_edges: set  # (push index, dependent index)

    @property
    def all_edges(self) -> set:
        return self.edges | self.control_edges

    def successors(self, use_control: bool = True) -> dict:
        succ = {i: [] for i in range(self.n)}
        for a, b in self.edges:
            succ[a].append(b)
        if use_control:
            for a, b in self.control_edges:
                succ[a].append(b)
        return succ

    def predecessors(self, use_control: bool = True) -> dict:
        pred = {i: [] for i in range(self.n)}
        for a, b in self.edges:
            pred[b].append(a)
        if use_control:
            for a, b in self.control_edges:
                pred[b].append(a)
        return pred


def build_edg(trace: Trace) -> EventDependenceGraph:
    """Single pass over the trace.

    Producers of a value id are source, upgrade, and op events; a write
    also registers as a producer of the value it stores, so that reads of
    the stored value connect through the store.  Consumers (op, sink,
    push, write, upgrade) receive a data edge from every prior producer
    of each id they use.  Events under an open push additionally receive
    a control edge from the innermost push; pops carry no edges.
    """
    trace.validate()
    producers: dict = {}
    edges = set()
    control_edges = set()
    open_pushes = []

    def link_uses(idx: int, *vids) -> None:
        for vid in vids:
            if vid is None:
                continue
            for p in producers.get(vid, ()):
                if p != idx:
                    edges.add((p, idx))

    def produce(idx: int, vid: int) -> None:
        producers.setdefault(vid, []).append(idx)

    def control(idx: int) -> None:
        if open_pushes:
            control_edges.add((open_pushes[-1], idx))

    for idx, e in enumerate(trace.events):
        if isinstance(e, SourceEvent):
            control(idx)
            produce(idx, e.v)
        elif isinstance(e, OpEvent):
            link_uses(idx, e.a1, e.a2)
            control(idx)
            produce(idx, e.new)
        elif isinstance(e, WriteEvent):
            link_uses(idx, e.old, e.new)
            control(idx)
            produce(idx, e.new)
        elif isinstance(e, UpgradeEvent):
            link_uses(idx, e.old)
            control(idx)
            produce(idx, e.new)
        elif isinstance(e, SinkEvent):
            link_uses(idx, e.v)
            control(idx)
        elif isinstance(e, PushEvent):
            link_uses(idx, e.v)
            control(idx)
            open_pushes.append(idx)
        elif isinstance(e, PopEvent):
            open_pushes.pop()
    return EventDependenceGraph(len(trace.events), edges, control_edges)


def _reach(start: Iterable[int], adj: dict) -> set:
    seen = set(start)
    todo = deque(seen)
    while todo:
        node = todo.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def _matching_pops(trace: Trace, included: set) -> set:
    """Indices of pop events whose matching push is included."""
    out = set()
    stack = []
    for idx, e in enumerate(trace.events):
        if isinstance(e, PushEvent):
            stack.append(idx)
        elif isinstance(e, PopEvent):
            push_idx = stack.pop()
            if push_idx in included:
                out.add(idx)
    return out


def source_to_sink_subtrace(graph: EventDependenceGraph, trace: Trace,
                            lsrc: Loc, lsnk: Loc) -> Trace:
    """Events lying on some dependence path from a source (or upgrade) at
    `lsrc` to a sink at `lsnk`; pops of included pushes are kept so the
    subtrace stays balanced.  Returns an empty trace when no path exists."""
    starts = [i for i, e in enumerate(trace.events)
              if isinstance(e, (SourceEvent, UpgradeEvent)) and e.loc == lsrc]
    ends = [i for i, e in enumerate(trace.events)
            if isinstance(e, SinkEvent) and e.loc == lsnk]
    if not starts:
        raise NoSuchLocation(f"no source or upgrade event at {lsrc}")
    if not ends:
        raise NoSuchLocation(f"no sink event at {lsnk}")
    forward = _reach(starts, graph.successors())
    backward = _reach(ends, graph.predecessors())
    core = forward & backward
    core |= _matching_pops(trace, core)
    indices = sorted(core)
    events = [trace.events[i] for i in indices]
    sub = Trace(events=events, meta=dict(trace.meta))
    if trace.values:
        keep = Trace(events=events).referenced_vids()
        sub.values = {vid: trace.values[vid] for vid in keep if vid in trace.values}
    return sub


# ---------------------------------------------------------------------------
# Subtrace classification and per-strategy detectability
# ---------------------------------------------------------------------------

class SubtraceClassification(Enum):
    DIRECT = "direct"
    EXPLICIT_ONLY = "explicit-only"
    EXPLICIT_AND_OBSERVABLE = "explicit-and-observable"
    OBSERVABLE_ONLY = "observable-only"
    INVOLVES_HIDDEN = "involves-hidden"


def classify_subtrace(sub: Trace) -> SubtraceClassification:
    """Hidden takes precedence over observable, observable over explicit;
    a subtrace with no micro flows at all is a direct transfer."""
    if not sub.events:
        raise EmptySubtrace("cannot classify an empty subtrace")
    has_start = any(isinstance(e, (SourceEvent, UpgradeEvent)) for e in sub.events)
    has_sink = any(isinstance(e, SinkEvent) for e in sub.events)
    if not has_start or not has_sink:
        raise EmptySubtrace("subtrace lacks a source/upgrade or a sink event")
    result = interpret_trace(sub)
    if result.hidden > 0:
        return SubtraceClassification.INVOLVES_HIDDEN
    if result.explicit > 0 and result.observable > 0:
        return SubtraceClassification.EXPLICIT_AND_OBSERVABLE
    if result.observable > 0:
        return SubtraceClassification.OBSERVABLE_ONLY
    if result.explicit > 0:
        return SubtraceClassification.EXPLICIT_ONLY
    return SubtraceClassification.DIRECT


def _has_path(sub: Trace, use_control: bool, allow_upgrades: bool) -> bool:
    graph = build_edg(sub)
    blocked = set() if allow_upgrades else {
        i for i, e in enumerate(sub.events) if isinstance(e, UpgradeEvent)}
    starts = [i for i, e in enumerate(sub.events)
              if isinstance(e, SourceEvent) and i not in blocked]
    succ = graph.successors(use_control=use_control)
    seen = set(starts)
    todo = deque(starts)
    while todo:
        node = todo.popleft()
        if isinstance(sub.events[node], SinkEvent):
            return True
        for nxt in succ.get(node, ()):
            if nxt not in seen and nxt not in blocked:
                seen.add(nxt)
                todo.append(nxt)
    return False


def has_explicit_path(sub: Trace) -> bool:
    """True when a pure data-dependence path (no control edges, no upgrade
    events) connects a source to a sink within the subtrace."""
    return _has_path(sub, use_control=False, allow_upgrades=False)


def has_nonhidden_path(sub: Trace) -> bool:
    """True when a path avoiding upgrade events connects a source to a sink."""
    return _has_path(sub, use_control=True, allow_upgrades=False)


def detectable_by(classification: SubtraceClassification, strategy: str,
                  explicit_path: Optional[bool] = None,
                  nonhidden_path: Optional[bool] = None) -> bool:
    """Would the given monitoring strategy flag this source-to-sink flow?

    NSU and PU track all three kinds of flows.  Observable tracking misses
    flows carried only by an upgrade.  Taint tracking needs a pure
    explicit path; when the classification mixes explicit and observable
    flows, pass `explicit_path` (from `has_explicit_path`) to resolve the
    ambiguity, otherwise the explicit flows are assumed to complete the
    path.
    """
    strategy = strategy.lower()
    if strategy in ("nsu", "pu"):
        return True
    if strategy == "observable":
        if classification is not SubtraceClassification.INVOLVES_HIDDEN:
            return True
        return bool(nonhidden_path)
    if strategy == "taint":
        if classification in (SubtraceClassification.DIRECT,
                              SubtraceClassification.EXPLICIT_ONLY):
            return True
        if classification is SubtraceClassification.EXPLICIT_AND_OBSERVABLE:
            return True if explicit_path is None else explicit_path
        return bool(explicit_path)
    raise ValueError(f"unknown strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Unique flows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowRecord:
    locations: frozenset
    classification: SubtraceClassification
    multiplicity: int


def unique_flows(flows: Iterable[Trace]) -> list:
    """Group source-to-sink subtraces by their set of code locations; two
    flows over the same locations count as one unique flow."""
    groups: dict = {}
    for sub in flows:
        key = frozenset(e.loc for e in sub.events)
        if key in groups:
            groups[key] = (groups[key][0], groups[key][1] + 1)
        else:
            groups[key] = (classify_subtrace(sub), 1)
    records = [FlowRecord(key, cls, count) for key, (cls, count) in groups.items()]
    records.sort(key=lambda r: sorted(str(loc) for loc in r.locations))
    return records
