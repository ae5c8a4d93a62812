import pytest

from fermidiag import (
    Momentum,
    Potential,
    build_bundles,
    build_fermi_system,
    build_patch_scheme,
)
from fermidiag import fock


TOY_DELTA = 1.0 / 12.0


@pytest.fixture(scope="session")
def toy_system():
    return build_fermi_system(1.0, 1.0)


@pytest.fixture(scope="session")
def toy_scheme(toy_system):
    return build_patch_scheme(toy_system, 6, TOY_DELTA, 1.1)


@pytest.fixture(scope="session")
def toy_potential():
    return Potential.uniform(1.0, 1.0)


@pytest.fixture(scope="session")
def toy_bundles(toy_system, toy_scheme, toy_potential):
    return build_bundles(toy_system, toy_scheme, toy_potential)


@pytest.fixture(scope="session")
def toy_q_out():
    return Momentum(0, 0, 2)


@pytest.fixture(scope="session")
def toy_q_in():
    return Momentum(0, 0, 1)


@pytest.fixture(scope="session")
def toy_mode_set(toy_scheme, toy_system, toy_bundles, toy_q_out, toy_q_in):
    return fock.mode_set_for(
        toy_scheme, toy_system, toy_bundles, extra=[toy_q_out, toy_q_in]
    )


@pytest.fixture(scope="session")
def toy_generator(toy_mode_set, toy_scheme, toy_system, toy_bundles):
    return fock.build_S(toy_mode_set, toy_scheme, toy_system, toy_bundles)
