import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import random_complex
from linalg_products import (
    bipartite_block,
    eig_hermitian,
    hadamard,
    haar_unitary,
    is_unitary,
    khatri_rao,
    khatri_rao_all,
    kron_all,
    kronecker,
    numerical_rank,
    party_realignment,
    polar_unitary,
    rank_one_gap,
    realign,
    singular_values,
    svd,
    vec,
)
from tensor_core import DomainError

seeds = st.integers(min_value=0, max_value=2**32 - 1)
SWAP = np.eye(4)[[0, 2, 1, 3]]


def test_kronecker_blocks(rng):
    A, B = random_complex(rng, 2, 3), random_complex(rng, 2, 2)
    K = kronecker(A, B)
    assert K.shape == (4, 6)
    assert_allclose(K[2:4, 4:6], A[1, 2] * B)


def test_khatri_rao_columns(rng):
    A, B = random_complex(rng, 3, 4), random_complex(rng, 2, 4)
    P = khatri_rao(A, B)
    for r in range(4):
        assert_allclose(P[:, r], np.kron(A[:, r], B[:, r]))
    with pytest.raises(DomainError):
        khatri_rao(A, random_complex(rng, 2, 3))


def test_hadamard_shape_check(rng):
    A = random_complex(rng, 2, 2)
    assert_allclose(hadamard(A, A), A * A)
    with pytest.raises(DomainError):
        hadamard(A, np.ones((2, 3)))


def test_vec_stacks_columns():
    Y = np.array([[1, 3], [2, 4]])
    assert vec(Y).real.ravel().tolist() == [1, 2, 3, 4]
    assert vec(Y).shape == (4, 1)


@settings(max_examples=200, deadline=None)
@given(seed=seeds, parties=st.integers(min_value=2, max_value=4),
       columns=st.integers(min_value=1, max_value=4))
def test_mixed_product_with_khatri_rao(seed, parties, columns):
    rng = np.random.default_rng(seed)
    rows = rng.integers(1, 4, size=parties)
    inner = rng.integers(1, 4, size=parties)
    S = [random_complex(rng, m, k) for m, k in zip(rows, inner)]
    P = [random_complex(rng, k, columns) for k in inner]
    lhs = kron_all(S) @ khatri_rao_all(P)
    rhs = khatri_rao_all([s @ p for s, p in zip(S, P)])
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.linalg.norm(rhs))


@settings(max_examples=200, deadline=None)
@given(seed=seeds, columns=st.integers(min_value=1, max_value=5))
def test_khatri_rao_gram_is_hadamard_of_grams(seed, columns):
    rng = np.random.default_rng(seed)
    A = random_complex(rng, int(rng.integers(1, 5)), columns)
    B = random_complex(rng, int(rng.integers(1, 5)), columns)
    P = khatri_rao(A, B)
    expected = hadamard(A.T @ A, B.T @ B)
    assert np.max(np.abs(P.T @ P - expected)) <= 1e-12 * max(1.0, np.linalg.norm(expected))
    expected_conj = hadamard(A.T @ A.conj(), B.T @ B.conj())
    assert np.max(np.abs(P.T @ P.conj() - expected_conj)) <= 1e-12 * max(1.0, np.linalg.norm(expected_conj))


class TestRealign:
    def test_kronecker_realigns_to_outer_product(self, rng):
        A, B = random_complex(rng, 2, 2), random_complex(rng, 3, 3)
        R = realign(kronecker(A, B), 2, 3)
        assert R.shape == (4, 9)
        assert_allclose(R, vec(A) @ vec(B).T, atol=1e-14)
        assert numerical_rank(R) == 1

    def test_rows_are_vectorized_blocks(self, rng):
        Z = random_complex(rng, 6, 6)
        R = realign(Z, 2, 3)
        # row (i + m j) holds vec(Z_ij)
        assert_allclose(R[1 + 2 * 0], vec(Z[3:6, 0:3]).ravel())
        assert_allclose(R[0 + 2 * 1], vec(Z[0:3, 3:6]).ravel())

    def test_identity_and_swap(self):
        assert numerical_rank(realign(np.eye(4), 2, 2)) == 1
        assert numerical_rank(realign(SWAP, 2, 2)) == 4

    def test_bad_grid(self):
        with pytest.raises(DomainError):
            realign(np.eye(5), 2, 2)

    def test_bipartite_block_moves_party_outermost(self, rng):
        A, B, C = (random_complex(rng, d, d) for d in (2, 3, 2))
        M = kron_all([A, B, C])
        assert_allclose(bipartite_block(M, [2, 3, 2], 2), kron_all([B, A, C]), atol=1e-14)
        assert_allclose(bipartite_block(M, [2, 3, 2], 3), kron_all([C, A, B]), atol=1e-14)
        assert_allclose(bipartite_block(M, [2, 3, 2], 1), M)

    def test_party_realignment_of_product_has_rank_one(self, example_p_factors):
        P = kron_all(example_p_factors)
        for i in (1, 2, 3):
            assert numerical_rank(party_realignment(P, [2, 2, 2], i)) == 1

    def test_party_out_of_range(self):
        with pytest.raises(DomainError):
            bipartite_block(np.eye(4), [2, 2], 3)


class TestRank:
    def test_zero_matrix(self):
        assert numerical_rank(np.zeros((3, 3))) == 0
        assert rank_one_gap(np.zeros((3, 3))) == 0.0

    def test_gap(self):
        assert rank_one_gap(np.diag([2.0, 1.0])) == pytest.approx(0.5)
        assert rank_one_gap(np.outer([1, 2], [3, 4])) < 1e-15

    @settings(max_examples=50, deadline=None)
    @given(seed=seeds, rank=st.integers(min_value=1, max_value=4))
    def test_invariant_under_unitaries(self, seed, rank):
        rng = np.random.default_rng(seed)
        s = np.concatenate([1.0 + np.arange(rank)[::-1], np.zeros(5 - rank)])
        M = haar_unitary(5, rng) @ np.diag(s) @ haar_unitary(5, rng)
        assert numerical_rank(M) == rank
        assert numerical_rank(haar_unitary(5, rng) @ M @ haar_unitary(5, rng)) == rank

    def test_tolerance_must_be_positive(self):
        with pytest.raises(DomainError):
            numerical_rank(np.eye(2), 0.0)


class TestDecompositions:
    def test_svd_reconstructs(self, rng):
        M = random_complex(rng, 3, 5)
        U, s, V = svd(M, full_matrices=False)
        assert_allclose(U @ np.diag(s) @ V.conj().T, M, atol=1e-13)
        assert np.all(np.diff(s) <= 0)

    def test_ghz_unfolding_singular_values(self):
        r = 1 / np.sqrt(2)
        s = singular_values(np.array([[r, 0, 0, 0], [0, 0, 0, r]]))
        assert_allclose(s, [r, r])

    def test_eig_hermitian_ascending(self):
        w, Q = eig_hermitian(np.diag([3.0, 1.0, 2.0]))
        assert_allclose(w, [1, 2, 3])
        assert is_unitary(Q)

    def test_rank_one_projector_spectrum(self, rng):
        v = random_complex(rng, 4)
        v /= np.linalg.norm(v)
        w, _ = eig_hermitian(np.outer(v, v.conj()))
        assert_allclose(w, [0, 0, 0, 1], atol=1e-14)

    def test_eig_hermitian_rejects_asymmetry(self):
        with pytest.raises(DomainError):
            eig_hermitian(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(DomainError):
            eig_hermitian(np.ones((2, 3)))

    def test_polar_and_haar_are_unitary(self, rng):
        assert is_unitary(polar_unitary(random_complex(rng, 3, 3)))
        for d in (1, 2, 5):
            assert is_unitary(haar_unitary(d, rng))
        assert not is_unitary(np.ones((2, 3)))
