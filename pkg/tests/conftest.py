import numpy as np
import pytest

from mfpod.doe import ESC_SPACE
from mfpod.field_grid import build_grid
from mfpod.synthetic_bench import DiscProblemConfig, build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_problem():
    return DiscProblemConfig(grid_n=24, n_hf_nodes=4000, n_lf_nodes=8000)


@pytest.fixture(scope="session")
def small_dataset(small_problem):
    return build_dataset(small_problem, n_doe=80, n_hf=30, seed=5)


@pytest.fixture
def unit_grid():
    return build_grid(4, 4, domain=(0.0, 1.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def small_surrogate(small_dataset):
    from mfpod.kriging import KrigingConfig
    from mfpod.surrogate import fit_field_surrogate

    ds = small_dataset
    return fit_field_surrogate("HF", X_hf=ds.X[ds.hf_index], Y_hf=ds.hf(ds.hf_index),
                               grid=ds.grid, k=6, config=KrigingConfig(n_restarts=1),
                               shared_theta=True, bounds=ESC_SPACE.bounds)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``record(n, ok, detail)`` stores a pass/fail line for criterion ``n``."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
