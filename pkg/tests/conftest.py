"""Shared fixtures: tiny synthetic question pools and a default policy.

Also collects one PASS/FAIL line per acceptance criterion and prints
them as a section at the end of the run.
"""
import re

import pytest

from steppref.backends.toy import default_policy
from steppref.synth import SynthTask, suite_questions

ACCEPTANCE_LINES: list[str] = []
_RECORDED: set[int] = set()


@pytest.fixture
def criterion():
    """Record one verdict line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        _RECORDED.add(number)
        assert ok, line

    return record


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    # a criterion test that died before recording still gets a FAIL line
    if report.when == "call" and report.failed:
        m = re.match(r"test_criterion_(\d+)", item.name)
        if m and int(m.group(1)) not in _RECORDED:
            number = int(m.group(1))
            reason = report.longreprtext.splitlines()[-1][:160] if report.longreprtext else "error"
            ACCEPTANCE_LINES.append(f"FAIL criterion {number}: {reason}")
            _RECORDED.add(number)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def questions6():
    return suite_questions("synth:5:6:3")


@pytest.fixture(scope="session")
def questions20():
    return suite_questions("synth:5:20:3")


@pytest.fixture()
def policy():
    return default_policy(seed=0)


@pytest.fixture(scope="session")
def task():
    return SynthTask()
