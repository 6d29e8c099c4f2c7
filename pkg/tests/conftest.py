import numpy as np
import pytest

from nonmarkov.operator_core import pauli


@pytest.fixture
def paulis():
    return pauli()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
