import pytest

_RESULTS = {}


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion; printed in the summary."""
    def record(number, passed, detail):
        _RESULTS[number] = (bool(passed), detail)
        print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
