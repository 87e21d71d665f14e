import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import threeclass_params  # noqa: E402

from specbulk.fixed_point import SolverOptions  # noqa: E402
from specbulk.spectrum import density_grid  # noqa: E402


@pytest.fixture(scope="session")
def threeclass256():
    """The p=256 three-class Toeplitz model (shared, immutable)."""
    return threeclass_params(256)


@pytest.fixture(scope="session")
def threeclass_grid(threeclass256):
    """Density grid of the three-class model on [0, 30] with 601 points.

    Built once per session; this is the expensive deterministic object
    shared by the spectrum tests and the acceptance suite. The build time
    is stashed on the grid for the acceptance runtime check.
    """
    start = time.perf_counter()
    grid = density_grid(0.0, 30.0, 601, threeclass256, SolverOptions(tol=1e-10))
    object.__setattr__(grid, "build_seconds", time.perf_counter() - start)
    return grid
