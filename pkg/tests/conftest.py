"""Shared test plumbing.

Acceptance tests register a one-line verdict here; the lines are echoed in
the terminal summary so the pass/fail status of each criterion is visible
without -s.
"""

ACCEPTANCE_LINES = []


def record(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
