import numpy as np
import pytest

from matscat import halfline as hl
from matscat.potentials import certify_decay, make_preset

# Hermitian coupling matrix used for the n = 2 matrix tests (fixed, no randomness)
V2 = np.array([[-6.0, 1.5 - 0.5j], [1.5 + 0.5j, -3.0]])


@pytest.fixture(scope="session")
def zero1():
    m = make_preset("zero", {"n": 1})
    return m, certify_decay(m, 5.0)


@pytest.fixture(scope="session")
def zero2():
    m = make_preset("zero", {"n": 2})
    return m, certify_decay(m, 5.0)


@pytest.fixture(scope="session")
def robin():
    m = make_preset("zero", {"n": 1})
    return m, certify_decay(m, 5.0), hl.boundary_from_unitary([[1j]])


@pytest.fixture(scope="session")
def well1():
    m = make_preset("square_well", {"v0": -1.0, "a": 0.0, "b": 1.0})
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="session")
def well4():
    m = make_preset("square_well", {"v0": -4.0, "a": 0.0, "b": 1.0})
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="session")
def well4_full():
    m = make_preset("square_well", {"v0": -4.0, "a": 0.0, "b": 1.0}, line="full")
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="session")
def matrix_well():
    m = make_preset("square_well", {"v0": V2, "a": 0.0, "b": 1.0})
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="session")
def diag_well():
    m = make_preset("square_well", {"v0": np.diag([-6.0, -3.0]), "a": 0.0, "b": 1.0})
    return m, certify_decay(m, 4.0)


@pytest.fixture(scope="session")
def sech2():
    m = make_preset("sech2", {"kappa": 1.0})
    return m, certify_decay(m, 0.5)


# --------------------------------------------------------------------------- acceptance summary

# filled by test_acceptance.py as (criterion, passed, seconds, detail)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, secs, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  ({secs:6.2f} s)  {detail}")
