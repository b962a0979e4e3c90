import itertools
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("vectomo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vectomo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_field(grid, seed=0, width=None):
    """Gaussian-blob vector field well inside the grid (band-limited enough for projector checks)."""
    from vectomo.fields import VectorField3
    r = np.random.default_rng(seed)
    z, y, x = grid.coordinates()
    w = width or min(grid.shape) / 8
    data = np.zeros((3,) + grid.shape)
    for c in range(3):
        for _ in range(2):
            cx, cy, cz = r.uniform(-0.15, 0.15, 3) * np.array([grid.nx, grid.ny, grid.nz])
            data[c] += r.uniform(0.5, 1.5) * np.exp(-((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) / (2 * w ** 2))
    return VectorField3(grid, data)


def energy_oracle(x, weights, prm):
    """Double loop over voxels and their in-grid neighbours; each bond counted once."""
    from vectomo.prior import rho
    total = 0.0
    shape = x.shape
    for idx in itertools.product(*(range(n) for n in shape)):
        nb_i = weights.at(idx, shape)
        for off, wi in nb_i.items():
            j = tuple(a + b for a, b in zip(idx, off))
            if j <= idx:
                continue
            wj = weights.at(j, shape)[tuple(-o for o in off)]
            total += 0.5 * (wi + wj) * float(rho(x[idx] - x[j], prm))
    return total


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
