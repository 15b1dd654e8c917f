import numpy as np
import pytest

from isslab import KernelKind, build_grid, invert_kernel, solve_gains

C0_REF = 13 / 5 * np.pi**2
P0_REF = 6 / 5 * np.pi**2
Q_REF = 1.0


@pytest.fixture(scope="session")
def kgrid201():
    return build_grid(KernelKind.K, 201, C0_REF, Q_REF)


@pytest.fixture(scope="session")
def mgrid201():
    return build_grid(KernelKind.M, 201, C0_REF)


@pytest.fixture(scope="session")
def lgrid201(kgrid201):
    return invert_kernel(kgrid201)


@pytest.fixture(scope="session")
def ngrid201(mgrid201):
    return invert_kernel(mgrid201)


@pytest.fixture(scope="session")
def gains201(mgrid201, kgrid201):
    return solve_gains(mgrid201, kgrid201, P0_REF, Q_REF)


@pytest.fixture(scope="session")
def kgrid101():
    return build_grid(KernelKind.K, 101, C0_REF, Q_REF)


@pytest.fixture(scope="session")
def mgrid101():
    return build_grid(KernelKind.M, 101, C0_REF)
