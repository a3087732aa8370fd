"""Shared expensive fixtures: the d = 7 ground state, linearized context, and
profile hierarchy are built once per session on the default production grid."""

import numpy as np
import pytest

from blowup_lab.grid import make_log_grid
from blowup_lab.linearized import build_context
from blowup_lab.stationary import solve_Q


@pytest.fixture(scope="session")
def grid7():
    return make_log_grid(1e-4, 1e4, 8192, d=7)


@pytest.fixture(scope="session")
def qmap(grid7):
    return solve_Q(7, grid7)


@pytest.fixture(scope="session")
def ctx(qmap):
    return build_context(qmap)


@pytest.fixture(scope="session")
def family(ctx):
    from blowup_lab.profiles import build_family
    return build_family(ctx, L=2, k_max=4)
