import pytest

_CRITERIA: dict = {}


@pytest.fixture
def report():
    """Record one acceptance line, then assert it."""

    def _report(number, name, ok, detail=""):
        _CRITERIA[number] = (name, bool(ok), detail)
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>3} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
