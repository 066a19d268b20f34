import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
