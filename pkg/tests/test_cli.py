import json

import pytest

from nanoflow.cli import main
from nanoflow.corpus import corpus_root


@pytest.fixture
def password_files(tmp_path):
    program = corpus_root() / "password.njs"
    policy = tmp_path / "policy.json"
    policy.write_text(json.dumps({
        "sources": [],
        "strategy": "pu",
        "mode": "measure",
        "env": {"passwd": {"value": "topSecret"}},
    }))
    return str(program), str(policy)


def invoke(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_run_password_counters(capsys, password_files):
    program, policy = password_files
    code, out = invoke(capsys, "run", "--strategy", "pu", "--mode", "measure",
                       "--policy", policy, program)
    assert code == 0
    payload = json.loads(out)
    assert payload["counters"] == {"explicit": 2, "observable": 2, "hidden": 0}
    assert payload["outcome"] == "completed"


def test_run_stdout_is_byte_stable(capsys, password_files):
    program, policy = password_files
    _, first = invoke(capsys, "run", "--policy", policy, program)
    _, second = invoke(capsys, "run", "--policy", policy, program)
    assert first == second


def test_run_nsu_enforce_location(capsys, tmp_path):
    program = corpus_root() / "location.njs"
    policy = tmp_path / "policy.json"
    policy.write_text(json.dumps({
        "env": {"location": {"value": 15, "label": "H"}}}))
    code, out = invoke(capsys, "run", "--strategy", "nsu", "--mode", "enforce",
                       "--policy", str(policy), str(program))
    assert code == 2
    payload = json.loads(out)
    assert payload["stop"]["kind"] == "NSUWrite"
    assert payload["stop"]["loc"] == "location.njs:5:3"


def test_run_missing_policy_is_usage_error(capsys, password_files):
    program, _ = password_files
    code, _ = invoke(capsys, "run", "--policy", "/nonexistent.json", program)
    assert code == 64


def test_bad_strategy_is_usage_error(capsys, password_files):
    program, policy = password_files
    code, _ = invoke(capsys, "run", "--strategy", "bogus", "--policy", policy, program)
    assert code == 64


def test_syntax_error_exits_three(capsys, tmp_path, password_files):
    _, policy = password_files
    bad = tmp_path / "bad.njs"
    bad.write_text("x = y $ z;")
    code, out = invoke(capsys, "run", "--policy", policy, str(bad))
    assert code == 3
    assert json.loads(out)["error"] == "syntax"


def test_trace_out_and_analyze(capsys, password_files, tmp_path):
    program, policy = password_files
    trace_path = tmp_path / "t.jsonl"
    code, _ = invoke(capsys, "run", "--policy", policy,
                     "--trace-out", str(trace_path), program)
    assert code == 0
    code, out = invoke(capsys, "analyze", "--trace", str(trace_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["microflows"] == {"explicit": 2, "observable": 2, "hidden": 0}
    assert len(payload["flows"]) == 1
    flow = payload["flows"][0]
    assert flow["events"] == 8  # everything but the irrelevant second write
    assert flow["detectable"]["pu"] is True


def test_analyze_with_explicit_locations(capsys, password_files, tmp_path):
    program, policy = password_files
    trace_path = tmp_path / "t.jsonl"
    invoke(capsys, "run", "--policy", policy, "--trace-out", str(trace_path), program)
    code, out = invoke(capsys, "analyze", "--trace", str(trace_path),
                       "--source", "password.njs:5:1", "--sink", "password.njs:13:1")
    assert code == 0
    assert json.loads(out)["flows"][0]["events"] == 8


def test_analyze_header_only_trace(capsys, tmp_path):
    trace_path = tmp_path / "empty.jsonl"
    trace_path.write_text('{"k":"meta","version":1,"program":"x","strategy":"pu"}\n')
    code, out = invoke(capsys, "analyze", "--trace", str(trace_path))
    assert code == 0
    payload = json.loads(out)
    assert payload["microflows"] == {"explicit": 0, "observable": 0, "hidden": 0}
    assert payload["flows"] == []


def test_analyze_direct_flow(capsys, tmp_path):
    src = tmp_path / "direct.njs"
    src.write_text("markSrc(x);\nsink(x);\n")
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"env": {"x": {"value": 1}}}))
    trace_path = tmp_path / "t.jsonl"
    invoke(capsys, "run", "--policy", str(policy), "--trace-out", str(trace_path), str(src))
    code, out = invoke(capsys, "analyze", "--trace", str(trace_path))
    payload = json.loads(out)
    assert len(payload["flows"]) == 1
    assert payload["flows"][0]["classification"] == "direct"


def test_infer_upgrades_cli(capsys, tmp_path):
    program = corpus_root() / "location.njs"
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"env": {"location": {"value": 15, "label": "H"},
                                          "y": {"value": ""}, "z": {"value": ""}}}))
    tests_dir = tmp_path / "tests"
    tests_dir.mkdir()
    (tests_dir / "t0.json").write_text(json.dumps(
        {"env": {"location": {"value": 15, "label": "H"}}}))
    out_path = tmp_path / "plan.json"
    code, out = invoke(capsys, "infer-upgrades", "--policy", str(policy),
                       "--tests", str(tests_dir), "--out", str(out_path),
                       str(program))
    assert code == 0
    payload = json.loads(out)
    assert payload == {"insertions": [{"loc": "location.njs:7:1", "var": "y"}]}
    # the plan file is consumable by `run --upgrades` under enforcement
    code, out = invoke(capsys, "run", "--strategy", "pu", "--mode", "enforce",
                       "--policy", str(policy), "--upgrades", str(out_path),
                       str(program))
    assert code == 0
    assert json.loads(out)["outcome"] == "completed"


def test_check_secrecy_cli(capsys, tmp_path):
    src = tmp_path / "hidden.njs"
    src.write_text("l = 0;\nif (h) {\n  l = 1;\n}\nsink(l);\n")
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({
        "env": {"h": {"value": False, "label": "H"}, "l": {"value": 0}}}))
    code, out = invoke(capsys, "check-secrecy", "--policy", str(policy),
                       "--condition", "observable", str(src))
    assert code == 0
    payload = json.loads(out)
    assert payload["condition"] == "observable"
    assert payload["verdict"] == "holds"
    code, out = invoke(capsys, "check-secrecy", "--policy", str(policy),
                       "--condition", "noninterference", str(src))
    payload = json.loads(out)
    assert payload["verdict"] == "fails"
    assert payload["counterexample"] is not None


def test_metrics_cli_schema(capsys, tmp_path):
    program = corpus_root() / "location.njs"
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"env": {"location": {"value": 15, "label": "H"},
                                          "y": {"value": ""}, "z": {"value": ""}}}))
    code, out = invoke(capsys, "metrics", "--policy", str(policy), str(program))
    assert code == 0
    payload = json.loads(out)
    assert set(payload) == {"lcr", "sbc", "permissiveness", "microflows"}
    assert payload["permissiveness"]["nsu"] == ["location.njs:5:3"]
    assert payload["permissiveness"]["pu"] == ["location.njs:7:1"]
