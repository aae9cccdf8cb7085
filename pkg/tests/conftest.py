import numpy as np
import pytest

from iodcbf.data import TrajectoryDataset, excitation_signal, partition
from iodcbf.geometry import box_polytope, extended_constraints, invariant_set
from iodcbf.model import build_extended_dynamics, fit_predictor
from iodcbf.sim import delayed_double_integrator, simulate_open_loop

T_INI = 5
N_DATA = 17


def benchmark_dataset(seed=0, n=N_DATA):
    u = excitation_signal(n, 1, seed)
    y = simulate_open_loop(delayed_double_integrator(), u)
    return TrajectoryDataset(u, y)


@pytest.fixture(scope="session")
def dataset():
    return benchmark_dataset()


@pytest.fixture(scope="session")
def model(dataset):
    r, residual = fit_predictor(partition(dataset, T_INI))
    return build_extended_dynamics(r, 1, 1, T_INI, residual)


@pytest.fixture(scope="session")
def u_set():
    return box_polytope([-1.0], [1.0])


@pytest.fixture(scope="session")
def ambient(u_set):
    return extended_constraints(u_set, box_polytope([-1.0], [1.0]), T_INI)


@pytest.fixture(scope="session")
def invariant_report(model, ambient, u_set):
    return invariant_set(ambient, model, u_set, max_iter=200)


@pytest.fixture(scope="session")
def safe_set(invariant_report):
    return invariant_report.set


@pytest.fixture(scope="session")
def integrator():
    """y_t = y_{t-1} + u_{t-1} with t_ini = 1, so xi = [u_{t-1}, y_{t-1}]."""
    return build_extended_dynamics(np.array([[1.0, 1.0]]), 1, 1, 1)


@pytest.fixture(scope="session")
def unit_box_2d():
    return box_polytope([-1.0, -1.0], [1.0, 1.0])
