"""Shared fixtures.

The optimized networks are expensive (about a minute each), so they are
built once per session and reused by every module that needs a converged
critical state.  Keep the parameters here in sync with the tolerances the
dependent tests assume: chi 4 with one transitional layer gives the Ising
energy to about 1e-3 and scaling dimensions to a few percent.
"""

import pytest

from merakit.bulk import optimize_bulk
from merakit.models import PAULI_Z, ising_bulk, xx_bulk


@pytest.fixture(scope="session")
def ising_chi4():
    return optimize_bulk(
        ising_bulk(), chi=4, transitional=1, sweeps=2000, flip=PAULI_Z, seed=1
    )


@pytest.fixture(scope="session")
def xx_chi4():
    return optimize_bulk(
        xx_bulk(), chi=4, transitional=1, sweeps=1500, flip=PAULI_Z, seed=2
    )
