import pytest

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, name, passed, detail)`` records one acceptance line."""
    def record(number, name, passed, detail=""):
        _ACCEPTANCE.append((number, name, passed, detail))
        print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}  {detail}".rstrip())
