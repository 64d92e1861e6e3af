"""Collects the one-line acceptance verdicts and prints them after the run."""

CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
