import pytest

_LINES_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = {}


@pytest.fixture
def report(request):
    """Record one summary line for an acceptance criterion."""
    lines = request.config.stash[_LINES_KEY]

    def _report(number, ok, detail):
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_LINES_KEY]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
