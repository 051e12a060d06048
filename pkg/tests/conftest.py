import numpy as np
import pytest

_CRITERIA: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Print and remember one acceptance line; the summary repeats them in order."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[n] = line
    print(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
