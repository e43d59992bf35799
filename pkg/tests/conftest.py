"""Shared fixtures: the worked-example states and operators, seeded generators."""

import numpy as np
import pytest

from state_codec import QuantumState, example_mixed_pair, example_psi_state, ghz_state
from tensor_core import Tensor


def random_complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def cos_sin_state(theta):
    """cos(theta)|000> + sin(theta)|111>."""
    psi = np.zeros(8, dtype=np.complex128)
    psi[0], psi[7] = np.cos(theta), np.sin(theta)
    return QuantumState.pure(psi, [2, 2, 2])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def slices_tensor():
    """3x2x2 tensor with frontal slices [[1,2],[3,4],[5,6]] and [[7,8],[9,10],[11,12]]."""
    front = np.array([[1, 2], [3, 4], [5, 6]])
    back = np.array([[7, 8], [9, 10], [11, 12]])
    return Tensor(np.stack([front, back], axis=-1))


@pytest.fixture
def ghz():
    return ghz_state()


@pytest.fixture
def psi():
    return example_psi_state()


@pytest.fixture
def example_ops():
    """M_1, M_2, M_3 taking GHZ to psi."""
    s = 1 / np.sqrt(2)
    return [np.eye(2), np.diag([1.0, -1.0]), np.array([[s, -s], [s, s]])]


@pytest.fixture
def mixed_pair():
    return example_mixed_pair(3.0, 5.0, 7.0)


@pytest.fixture
def example_p_factors():
    """I (x) [[0,i],[i,0]] (x) [[0,-1],[1,0]] relates the two mixed fixtures."""
    return [np.eye(2), np.array([[0, 1j], [1j, 0]]), np.array([[0, -1], [1, 0]])]
