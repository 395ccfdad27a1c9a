from __future__ import annotations

import pytest

from chainbench.core import AUDIT


@pytest.fixture(autouse=True)
def feedback_audit(request):
    """Fail any test that reads a forbidden loss.

    Tests marked ``forbidden_ok`` trigger violations on purpose; their count
    is rolled back so the session tally only reflects learner behaviour.
    """
    start = AUDIT.total
    yield
    if request.node.get_closest_marker("forbidden_ok") is not None:
        AUDIT.total = start
    else:
        assert AUDIT.total == start, f"{AUDIT.total - start} feedback violations during test"


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.total != 0 and exitstatus == 0:
        session.exitstatus = 1


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line per acceptance criterion and echo it immediately."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    from chainbench.kernels import IMPLEMENTATION

    terminalreporter.write_line(f"chainbench kernels: {IMPLEMENTATION}")
    terminalreporter.write_line(f"feedback violations across the session: {AUDIT.total}")
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
