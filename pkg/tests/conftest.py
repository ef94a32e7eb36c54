import pytest

# acceptance outcomes, printed once at the end of the session
CRITERIA: dict = {}


@pytest.fixture
def criterion():
    def record(key: str, passed: bool, detail: str) -> None:
        CRITERIA[key] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {key}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: [int(p) if p.isdigit() else p
                                                for p in k.replace(".", " ").split()]):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
