import pytest

_criteria = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one ``criterion N: PASS|FAIL ...`` line per acceptance criterion."""
    return _criteria


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_criteria, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
