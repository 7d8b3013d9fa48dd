import pytest

from nanoflow import lang, upgrades
from nanoflow.lang import Loc, parse
from nanoflow.monitor import (Mode, Outcome, Policy, Strategy, StrategyConfig,
                              build_initial_state, run)
from nanoflow.upgrades import (RoundLimitExceeded, UpgradePlan, infer_upgrades,
                               load_plan, save_plan, verify_fixpoint)

from conftest import PASSWORD_SRC, make_policy

LOCATION_SRC = """y = "";
z = "";
if ((10 < location) && (location < 20)) {
  y = "Home";
}
z = "You are at " + y;
"""


def location_setup():
    program = parse(LOCATION_SRC, "loc.njs")
    policy = make_policy(sources=("location",),
                         bindings={"location": 15, "y": "", "z": ""})
    return program, [build_initial_state(policy.bindings)], policy


def test_location_inference_single_round():
    program, tests, policy = location_setup()
    plan = infer_upgrades(program, tests, policy)
    assert plan.insertions == frozenset({(Loc("loc.njs", 6, 1), "y")})


def test_no_sensitive_branches_no_insertions():
    program = parse("x = 1;\ny = x;\nsink(y);", "p.njs")
    policy = make_policy(bindings={"x": 0, "y": 0})
    plan = infer_upgrades(program, [build_initial_state(policy.bindings)], policy)
    assert plan.insertions == frozenset()


def test_password_inference():
    src = PASSWORD_SRC.replace("upgrade(gotIt);\n", "")
    program = parse(src, "pw.njs")
    policy = make_policy(bindings={"passwd": "topSecret"})
    tests = [build_initial_state({"passwd": "topSecret"}),
             build_initial_state({"passwd": "abc"})]
    plan = infer_upgrades(program, tests, policy)
    sink_loc = next(s.loc for s in lang.iter_statements(program)
                    if isinstance(s, lang.Sink))
    assert plan.insertions == frozenset({(sink_loc, "gotIt")})
    # soundness w.r.t. the tests: both now complete under PU enforcement
    interception = plan.as_interception_map()
    for init in tests:
        res = run(program, init=init, cfg=StrategyConfig(Strategy.PU, Mode.ENFORCE),
                  policy=policy, upgrades=interception, sink_stops=False)
        assert res.outcome is Outcome.COMPLETED


def test_verify_fixpoint_of_inferred_plans(corpus_entries):
    for entry in corpus_entries:
        policy = entry.test_policies[0]
        plan = infer_upgrades(entry.program, entry.tests, policy)
        assert verify_fixpoint(entry.program, plan, entry.tests, policy), entry.name


def test_removing_a_needed_insertion_breaks_fixpoint():
    program, tests, policy = location_setup()
    plan = infer_upgrades(program, tests, policy)
    stripped = UpgradePlan(frozenset(), program)
    assert not verify_fixpoint(program, stripped, tests, policy) or not plan.insertions


def test_empty_program_fixpoint():
    program = parse("skip;")
    policy = make_policy()
    plan = UpgradePlan(frozenset(), program)
    assert verify_fixpoint(program, plan, [build_initial_state({})], policy)


def test_round_limit():
    program, tests, policy = location_setup()
    with pytest.raises(RoundLimitExceeded):
        infer_upgrades(program, tests, policy, max_rounds=1)


def test_plan_roundtrip(tmp_path):
    program, tests, policy = location_setup()
    plan = infer_upgrades(program, tests, policy)
    path = tmp_path / "plan.json"
    save_plan(plan, path)
    again = load_plan(path, program)
    assert again.insertions == plan.insertions


def test_interception_applies_every_visit():
    # the upgrade runs on each loop iteration; once the target is sensitive
    # the later visits are no-ops
    src = "x = 0;\ni = 0;\nwhile (i < 3) {\n  y = x;\n  i = i + 1;\n}\n"
    program = parse(src, "w.njs")
    policy = make_policy(bindings={"x": 0, "i": 0, "y": 0})
    y_loc = Loc("w.njs", 4, 3)
    res = run(program, init=build_initial_state(policy.bindings), policy=policy,
              upgrades={y_loc: ("x",)})
    assert res.outcome is Outcome.COMPLETED
    assert res.counters.hidden == 1


def test_interception_refires_after_relowering():
    # reassigning the target with insensitive data re-lowers it, so the
    # intercepted upgrade fires again on the next visit
    src = "i = 0;\nwhile (i < 3) {\n  x = i;\n  i = i + 1;\n}\n"
    program = parse(src, "w.njs")
    policy = make_policy(bindings={"i": 0, "x": 0})
    x_loc = Loc("w.njs", 3, 3)
    res = run(program, init=build_initial_state(policy.bindings), policy=policy,
              upgrades={x_loc: ("x",)})
    assert res.outcome is Outcome.COMPLETED
    assert res.counters.hidden == 3


def test_known_limitation_unexercised_branch():
    # Tests only cover h=false: the branch that would mark y partially
    # leaked never runs, so inference inserts nothing and the hidden flow
    # stays unobserved.  This is the documented coverage limitation, not a
    # defect.
    src = "markSrc(h);\nif (h) {\n  y = 1;\n}\nsink(y);"
    program = parse(src, "lim.njs")
    policy = make_policy(bindings={"h": False, "y": 0})
    tests = [build_initial_state(policy.bindings)]
    plan = infer_upgrades(program, tests, policy)
    assert plan.insertions == frozenset()
    res = run(program, init=tests[0], policy=policy)
    assert res.counters.hidden == 0  # the missed hidden flow
