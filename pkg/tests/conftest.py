"""Shared test plumbing: a collected pass/fail line per acceptance run."""

ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append((number, f"ACCEPTANCE {number}: {verdict} {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance summary")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
