import pytest

_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record one verdict line per acceptance criterion; printed again in the terminal summary."""

    def emit(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag}: {'PASS' if ok else 'FAIL'} - {detail}"
        _LINES.append(line)
        print(line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
