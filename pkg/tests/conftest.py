import pytest

ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Records and prints one PASS/FAIL line for an acceptance criterion."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n  {line}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
