import numpy as np
import pytest

from wflow.basis import build_warped_trig_basis, weights
from wflow.reference import make_gaussian_reference


@pytest.fixture(scope="session")
def ref():
    return make_gaussian_reference(1, 1.0)


@pytest.fixture(scope="session")
def basis8(ref):
    return build_warped_trig_basis(ref, 8)


@pytest.fixture(scope="session")
def basis16(ref):
    return build_warped_trig_basis(ref, 16)


@pytest.fixture(scope="session")
def w8(basis8):
    return weights(basis8, "gradient-and-hessian")


@pytest.fixture(scope="session")
def w16(basis16):
    return weights(basis16, "gradient-and-hessian")


def rng(*key):
    return np.random.default_rng(list(key))
