import pytest

_LINES = []


@pytest.fixture
def acceptance():
    """``acceptance(k, ok, detail)`` records one criterion verdict; all of
    them are printed in the terminal summary."""

    def record(k, ok, detail):
        _LINES.append((k, bool(ok), detail))
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
