import pytest

CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store ``(passed, detail)`` for the terminal summary."""

    def _record(number, title, passed, detail):
        CRITERIA[number] = (title, bool(passed), detail)
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        print(line)
        return line

    return _record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
