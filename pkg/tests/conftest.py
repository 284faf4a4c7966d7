"""Shared pytest wiring: the acceptance verdict block.

Acceptance tests append one line per criterion; the hook replays them
after the run so the verdicts survive output capture.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
