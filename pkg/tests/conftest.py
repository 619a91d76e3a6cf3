import pytest

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def record():
    """Store one summary line per acceptance criterion."""
    def _record(key, ok, detail):
        ACCEPTANCE[key] = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[key])
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])
