"""Shared pytest wiring: surface acceptance-criterion results in the
terminal summary, where output capture cannot swallow them."""

CRITERION_RESULTS = []


def record_criterion(criterion: int, passed: bool, detail: str):
    CRITERION_RESULTS.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for criterion, passed, detail in sorted(CRITERION_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"ACCEPTANCE {criterion}: {status} - {detail}")
