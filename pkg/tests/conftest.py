import numpy as np
import pytest

from gfts.panel import SyntheticSpec, synthesize_panel


@pytest.fixture(scope="session")
def small_panel():
    """Noise-free (2, 2) layout, 20 years x 21 ages."""
    spec = SyntheticSpec(layout=(2, 2), n=20, ages=21, K_true=2, dynamics="ar1")
    return synthesize_panel(spec, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    """Store the one-line verdict of an acceptance criterion."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
