import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Print one PASS/FAIL line straight to the terminal and keep it for the summary."""

    def report(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
