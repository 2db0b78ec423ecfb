"""Shared pytest wiring for the suite.

The acceptance module records one line per criterion; echoing them in
the terminal summary keeps the pass/fail verdicts visible even though
pytest captures per-test stdout.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
