import pytest

_acceptance_lines = []


def record_acceptance(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    _acceptance_lines.append((num, f"[C{num}] {name}: {status}{suffix}"))


@pytest.fixture
def acceptance():
    """Record one pass/fail line per criterion, then enforce it."""

    def check(num: int, name: str, ok: bool, detail: str = "") -> None:
        record_acceptance(num, name, bool(ok), detail)
        assert ok, f"criterion C{num} ({name}) failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
