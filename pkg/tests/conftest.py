import pytest

from nanoflow import lang
from nanoflow.monitor import (Mode, Policy, Strategy, StrategyConfig,
                              build_initial_state, run)


def make_policy(sources=(), bindings=None, strategy=Strategy.PU, mode=Mode.MEASURE):
    return Policy(sources=tuple(sources), strategy=strategy, mode=mode,
                  bindings=bindings or {})


def run_src(src, sources=(), bindings=None, strategy=Strategy.PU,
            mode=Mode.MEASURE, filename="test.njs", **kw):
    program = lang.parse(src, filename)
    policy = make_policy(sources, bindings, strategy, mode)
    return run(program, policy=policy, program_name=filename, **kw)


PASSWORD_SRC = """gotIt = false;
markSrc(passwd);
paddedPasswd = "xx" + passwd;
knownPasswd = 0;
if (paddedPasswd === "xxtopSecret") {
  gotIt = true;
  knownPasswd = passwd;
}
upgrade(gotIt);
sink(gotIt);
"""


@pytest.fixture
def password_program():
    return lang.parse(PASSWORD_SRC, "password.njs")


@pytest.fixture(scope="session")
def corpus_entries():
    from nanoflow.corpus import load_manifest
    return load_manifest()
