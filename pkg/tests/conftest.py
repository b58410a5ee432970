"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number: int, title: str, passed: bool, detail: str) -> None:
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number} [{verdict}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
