import numpy as np
import pytest

from tumorocc.phantom import builtin_phantom


@pytest.fixture(scope="session")
def phantom():
    return builtin_phantom()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; shown live and in the terminal summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"[acceptance {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
