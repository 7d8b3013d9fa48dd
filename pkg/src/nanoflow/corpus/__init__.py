"""Bundled NanoJS programs with expected analysis results.

Each manifest entry names a program, its policy, one or more test
initializations, and the expected outcome of specific monitored runs
(plus inference/flow expectations where applicable).  The acceptance
suite replays all of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .. import lang
from ..monitor import Policy, build_initial_state


def corpus_root() -> Path:
    return Path(resources.files(__package__))  # type: ignore[arg-type]


@dataclass
class CorpusEntry:
    name: str
    source: str
    program: lang.Stmt
    policy: Policy
    test_objs: list      # raw {"env": ...} dicts
    tests: list          # (env, heap) initial states, policy merged
    test_policies: list  # Policy per test (sources may differ per test)
    runs: list
    inference: dict | None
    flows: list
    sbc: float | None


def load_manifest() -> list:
    root = corpus_root()
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    entries = []
    for spec in manifest["programs"]:
        source = (root / spec["file"]).read_text(encoding="utf-8")
        program = lang.parse(source, spec["file"])
        policy = Policy.from_json(spec["policy"])
        test_objs = spec.get("tests", [{}])
        test_policies = [policy.merged_env(obj) for obj in test_objs]
        tests = [build_initial_state(p.bindings) for p in test_policies]
        entries.append(CorpusEntry(
            name=spec["file"],
            source=source,
            program=program,
            policy=policy,
            test_objs=test_objs,
            tests=tests,
            test_policies=test_policies,
            runs=spec.get("runs", []),
            inference=spec.get("inference"),
            flows=spec.get("flows", []),
            sbc=spec.get("sbc"),
        ))
    return entries


def entry(name: str) -> CorpusEntry:
    for e in load_manifest():
        if e.name == name:
            return e
    raise KeyError(name)
