import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it to the terminal."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, ok, summary):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {summary}"
        ACCEPTANCE_LINES.append((number, line))
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
