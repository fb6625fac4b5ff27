"""Collects acceptance verdicts and prints them after the run."""

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_verdict(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((name, passed, detail))
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
