import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def dense_laplacian(side, spacing=1.0):
    """Laplacian assembled entry by entry from the Manhattan-distance definition."""
    n = side * side
    L = np.zeros((n, n))
    for a in range(n):
        ai, aj = divmod(a, side)
        for b in range(n):
            bi, bj = divmod(b, side)
            if abs(ai - bi) + abs(aj - bj) == 1:
                L[a, b] += 1.0 / spacing**2
                L[a, a] -= 1.0 / spacing**2
    return L


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
