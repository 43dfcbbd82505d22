import pytest


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance verdict: ``acceptance(n, ok, detail)``."""

    def record(n, ok, detail=""):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        request.config._acceptance[n] = (status, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_acceptance", {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        status, detail = rows[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
