from pathlib import Path

import pytest

DATA = Path(__file__).resolve().parents[1] / "src" / "followage" / "data"

# filled by the acceptance module, printed once at the end of the session
VERDICTS: list[str] = []


@pytest.fixture
def data_dir():
    return DATA


def record(criterion: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
