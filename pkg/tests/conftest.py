import warnings

import numpy as np
import pytest

from kswave.field_ops import StripGrid, wave_on_grid
from kswave.wave_profile import WaveParams, solve_wave


@pytest.fixture(scope="session")
def wave_s1():
    """s = 1, eps = 0.05 profile at dz = 1e-3 on [-20, 20]."""
    return solve_wave(WaveParams(1.0, 0.05), half_length=20.0, dz=1e-3)


@pytest.fixture(scope="session")
def strip():
    return StripGrid(20.0, 256, 0.3, 32)


@pytest.fixture(scope="session")
def strip_wave(strip):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return wave_on_grid(WaveParams(1.0, 0.05), strip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store and print one acceptance line."""
    line = f"{criterion:<4s} {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE[criterion] = line
    print(line)


def _key(name):
    digits = "".join(ch for ch in name if ch.isdigit())
    return (int(digits) if digits else 0, name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=_key):
        terminalreporter.write_line(_ACCEPTANCE[name])
