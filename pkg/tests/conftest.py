import pytest

# (criterion number, passed, detail) recorded by the acceptance tests
ACCEPTANCE: list = []


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((number, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
