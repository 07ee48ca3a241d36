import pytest

_LINES = {}


class AcceptanceReport:
    def record(self, criterion: int, passed, detail: str) -> None:
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        _LINES[criterion] = f"criterion {criterion:2d}: {status:8s} {detail}"
        print(_LINES[criterion])


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
