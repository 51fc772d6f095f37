"""Shared pytest plumbing: collects acceptance verdict lines for the summary."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_check():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(num: int, passed: bool, detail: str) -> None:
        line = f"criterion {num}: {'PASS' if passed else 'FAIL'} — {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
