"""Collects one pass/fail line per acceptance criterion and prints them at the end of the session."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(label: str, ok: bool | None, detail: str) -> bool:
        status = {True: "PASS", False: "FAIL", None: "WARN"}[ok]
        line = f"[{status}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
