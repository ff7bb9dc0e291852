import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from brwtraps.lattice import LatticeConfig, TrapField, generate_environment

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def golden_field() -> TrapField:
    return generate_environment(LatticeConfig(2, 12, 0.7, 42))


@pytest.fixture(scope="session")
def small_field() -> TrapField:
    return generate_environment(LatticeConfig(2, 3, 0.7, 42))


def field_from_rows(rows, p=0.5):
    """Build a d=2 field from strings ('#' trap, '.' vacant); row i is x0 = i - L."""
    traps = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    L = (traps.shape[0] - 1) // 2
    return TrapField.from_traps(LatticeConfig(2, L, p, 0), traps)
