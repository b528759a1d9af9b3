import pytest

# acceptance checks append (criterion, ok, detail); printed once at the end
VERDICTS = []


@pytest.fixture
def verdict():
    def record(name, ok, detail=""):
        VERDICTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
