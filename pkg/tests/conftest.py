import pytest

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance verdict line, then fail the test if the verdict is FAIL."""
    def _record(number: int, ok: bool, detail: str, warn: str = "") -> None:
        status = "FAIL" if not ok else ("PASS (warn)" if warn else "PASS")
        text = detail + (f"; warn: {warn}" if warn and ok else "")
        ACCEPTANCE[number] = (status, text)
        print(f"criterion {number}: {status}: {text}")
        assert ok, f"criterion {number} failed: {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}: {text}")
