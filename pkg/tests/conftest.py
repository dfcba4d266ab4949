import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_record():
    """Collects one (criterion, passed, detail) line per acceptance check."""

    def record(label, passed, detail):
        _ACCEPTANCE.append((label, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
