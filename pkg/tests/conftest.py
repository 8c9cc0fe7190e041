from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tokenrelay.config import SimConfig  # noqa: E402

# coarse grids keep table builds in the test suite to a fraction of a second
COARSE = dict(pi_grid=(0.05, 0.15, 0.3), mu_grid=(0.05, 0.15, 0.3), cost_grid=(0.025, 0.1, 0.2))


def small_config(**kw) -> SimConfig:
    base = SimConfig(n_ues=60, cells_x=2, cells_y=2, slots=150, token_supply=180, **COARSE)
    return replace(base, **kw)


@pytest.fixture
def small_cfg():
    return small_config()


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
