"""Shared pytest wiring: the acceptance suite reports one verdict line per
criterion, collected here and echoed after the run so the gate status is
visible under output capture."""

acceptance_verdicts: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_verdicts:
        terminalreporter.section("acceptance gate")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
