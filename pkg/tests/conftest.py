import pytest

_REPORT: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one PASS/FAIL line for the acceptance summary."""

    def record(number, ok, detail=""):
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _REPORT[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_REPORT, key=lambda k: (isinstance(k, str), k)):
        terminalreporter.write_line(_REPORT[number])
