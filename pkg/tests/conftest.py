"""Shared pytest plumbing: the acceptance verdict registry.

Acceptance tests (test_acceptance.py) call ``record_verdict`` so the run
ends with one readable pass/fail line per criterion, even when an assert
trips.  The block only prints when at least one acceptance test ran.
"""

from __future__ import annotations

ACCEPTANCE_GATES = {
    1: "gradient correctness",
    2: "whitening identity",
    3: "scattering shape and stability",
    4: "normality-test oracles",
    5: "normality rejections exceed null band",
    6: "decoder training sanity",
    7: "vae training",
    8: "gan training",
    9: "visualization matrix",
    10: "determinism and persistence",
}

_verdicts: dict = {}


def record_verdict(number: int, passed: bool, detail: str) -> None:
    """Store one criterion's outcome for the end-of-run summary."""
    _verdicts[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_GATES):
        name = ACCEPTANCE_GATES[number]
        if number in _verdicts:
            passed, detail = _verdicts[number]
            status = "PASS" if passed else "FAIL"
            terminalreporter.write_line(f"{number:2d} {name}: {status} ({detail})")
        else:
            terminalreporter.write_line(f"{number:2d} {name}: NOT RUN")
