import pytest

from dp_solver import SolverConfig, calibrate_lambda


def small_config(N: int, S: float, **overrides) -> SolverConfig:
    """Coarse grid that keeps a full calibration to a few seconds."""
    params = dict(N=N, S=S, l_max=20.0, grid_points=801, quad_order=24, expectation="exact",
                  v_steps=120, v_tol=1e-5)
    params.update(overrides)
    return SolverConfig(**params)


@pytest.fixture(scope="session")
def n1_solution():
    return calibrate_lambda(1.0, small_config(1, 1.0))


@pytest.fixture(scope="session")
def n2_solution():
    return calibrate_lambda(2.42, small_config(2, 2.42))


@pytest.fixture(scope="session")
def n3_solution():
    return calibrate_lambda(2.0, small_config(3, 2.0))
