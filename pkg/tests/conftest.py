"""Prints the acceptance summary after the run, one line per criterion."""
from __future__ import annotations

import acceptance_log


def pytest_terminal_summary(terminalreporter) -> None:
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.LINES):
        terminalreporter.write_line(acceptance_log.LINES[n])
