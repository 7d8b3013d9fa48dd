"""nanoflow: dynamic information-flow analysis for the NanoJS language.

Modules:
    lang           syntax, parser, AST
    monitor        monitored small-step interpreter with flow counting
    traceanalysis  iFlow traces, offline counting, dependence graphs
    metrics        label creep, sensitive branch coverage, permissiveness
    secrecy        security conditions and the noninterference oracle
    upgrades       testing-based upgrade-statement inference
    cli            the `nanoflow` command
    corpus         bundled example programs with expected results
"""

__version__ = "0.1.0"
