import numpy as np
import pytest

from freya.objectives import generate_quadratic

ACCEPTANCE_COUNT = 12
_acceptance = {}


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``acceptance(number, title, ok, detail)``; asserts ``ok``."""

    def record(number, title, ok, detail=""):
        _acceptance[number] = (bool(ok), title, detail)
        print(f"ACCEPTANCE {number:02d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"acceptance {number} failed: {title} {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in str(item) for item in terminalreporter.stats.get("passed", []) +
              terminalreporter.stats.get("failed", []))
    if not ran and not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, ACCEPTANCE_COUNT + 1):
        if number in _acceptance:
            ok, title, detail = _acceptance[number]
            terminalreporter.write_line(f"{number:2d}. {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        else:
            terminalreporter.write_line(f"{number:2d}. FAIL  (no result recorded)")


@pytest.fixture
def small_quadratic():
    return generate_quadratic(40, 6, 1e-2, 1.0, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
