"""Shared test plumbing: acceptance-criterion PASS/FAIL lines.

test_acceptance.py records one line per criterion through the ``acceptance``
fixture; the terminal-summary hook prints them at the end of every pytest run
so the verdict is visible without digging through the log.
"""

import pytest

_ACCEPTANCE_LINES = []


class AcceptanceRecorder:
    def record(self, criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"{status} {criterion}"
        if detail:
            line += f" [{detail}]"
        _ACCEPTANCE_LINES.append(line)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
