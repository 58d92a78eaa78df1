import pytest

# filled by test_acceptance: criterion number -> (passed, detail)
ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def rec(n, passed, detail=""):
        ACCEPTANCE[n] = (bool(passed), detail)
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
