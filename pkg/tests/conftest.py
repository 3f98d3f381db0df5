import os

import pytest

ACCEPTANCE_LINES = []


def pytest_collection_modifyitems(config, items):
    if os.environ.get("COLT_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="multi-hour run; set COLT_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion.

    Call it with the criterion label, a bool and a detail string; the line is
    printed immediately and again in the terminal summary.
    """

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
