import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the summary."""

    def _record(criterion: int, passed: bool, detail: str) -> None:
        status = "PASS" if passed else "FAIL"
        line = f"criterion {criterion}: {status}  {detail}"
        ACCEPTANCE[criterion] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
