import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import random_complex
from kron_factor import (
    KronFactorizationError,
    factorize_bipartite,
    factorize_multiparty,
    is_kron,
    unitarize_factors,
)
from linalg_products import haar_unitary, is_unitary, kron_all
from tensor_core import DomainError

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims_strategy = st.lists(st.integers(min_value=2, max_value=3), min_size=2, max_size=3)


def assert_proportional(a, b, atol=1e-10):
    """a = c b for some nonzero scalar c."""
    k = np.argmax(np.abs(b))
    c = a.flat[k] / b.flat[k]
    assert abs(c) > 0
    assert_allclose(a, c * b, atol=atol)


class TestIsKron:
    def test_worked_p(self, example_p_factors):
        ok, gaps = is_kron(kron_all(example_p_factors), [2, 2, 2])
        assert ok
        assert max(gaps) < 1e-12

    def test_swap_is_not_a_product(self):
        ok, gaps = is_kron(np.eye(4)[[0, 2, 1, 3]], [2, 2])
        assert not ok
        assert gaps[0] == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            is_kron(np.eye(6), [2, 2])

    @pytest.mark.parametrize("c", [3.0, -0.25j, 1e-6 * (1 + 1j)])
    def test_invariant_under_scaling(self, example_p_factors, c):
        P = kron_all(example_p_factors)
        assert is_kron(c * P, [2, 2, 2])[0]
        assert not is_kron(c * np.eye(4)[[0, 2, 1, 3]], [2, 2])[0]
        assert_allclose(is_kron(c * P, [2, 2, 2])[1], is_kron(P, [2, 2, 2])[1], atol=1e-12)


class TestFactorize:
    def test_bipartite_split_of_worked_p(self, example_p_factors):
        P = kron_all(example_p_factors)
        m1, m2, residual = factorize_bipartite(P, 2, 4)
        assert residual < 1e-12
        assert_proportional(m1, np.eye(2))
        assert_proportional(m2, kron_all(example_p_factors[1:]))

    def test_multiparty_worked_p(self, example_p_factors):
        result = factorize_multiparty(kron_all(example_p_factors), [2, 2, 2])
        assert result.residual < 1e-12
        assert result.invertible
        for found, expected in zip(result.factors, example_p_factors):
            assert_proportional(found, expected)
        assert_allclose(result.reconstruct(), kron_all(example_p_factors), atol=1e-12)

    def test_gauge(self, rng):
        factors = [random_complex(rng, d, d) for d in (2, 3, 2)]
        result = factorize_multiparty(kron_all(factors), [2, 3, 2])
        for m in result.factors[:-1]:
            assert np.linalg.norm(m) == pytest.approx(np.sqrt(m.shape[0]))
            pivot = m.flat[np.argmax(np.abs(m))]
            assert abs(pivot.imag) < 1e-12 and pivot.real > 0

    def test_singular_factor_is_flagged(self):
        result = factorize_multiparty(np.kron(np.diag([1.0, 0.0]), np.eye(2)), [2, 2])
        assert not result.invertible

    def test_swap_raises_with_party_and_gap(self):
        with pytest.raises(KronFactorizationError) as info:
            factorize_multiparty(np.eye(4)[[0, 2, 1, 3]], [2, 2])
        assert info.value.party in (1, 2)
        assert info.value.gap == pytest.approx(1.0)

    def test_error_names_first_failing_party(self):
        I, Z = np.eye(2), np.diag([1.0, -1.0])
        # party gaps are about 0.089, 0.51 and 0.49: party 1 fails first, party 2 worst
        M = kron_all([I, I, I]) + 0.1 * kron_all([Z, Z, I]) + 0.5 * kron_all([I, Z, Z])
        _, gaps = is_kron(M, [2, 2, 2])
        assert np.argmax(gaps) == 1
        with pytest.raises(KronFactorizationError) as info:
            factorize_multiparty(M, [2, 2, 2])
        assert info.value.party == 1
        assert info.value.gap == pytest.approx(0.2 / np.sqrt(5))

    def test_zero_matrix(self):
        with pytest.raises(DomainError):
            factorize_multiparty(np.zeros((4, 4)), [2, 2])
        with pytest.raises(DomainError):
            factorize_bipartite(np.zeros((4, 4)), 2, 2)

    @settings(max_examples=100, deadline=None)
    @given(seed=seeds, dims=dims_strategy)
    def test_random_products_recovered(self, seed, dims):
        rng = np.random.default_rng(seed)
        factors = [random_complex(rng, d, d) for d in dims]
        M = kron_all(factors)
        result = factorize_multiparty(M, dims)
        assert np.linalg.norm(result.reconstruct() - M) <= 1e-10 * np.linalg.norm(M)

    @settings(max_examples=100, deadline=None)
    @given(seed=seeds, dims=dims_strategy)
    def test_random_matrices_rejected(self, seed, dims):
        rng = np.random.default_rng(seed)
        D = int(np.prod(dims))
        ok, _ = is_kron(random_complex(rng, D, D), dims)
        assert not ok
        with pytest.raises(KronFactorizationError):
            factorize_multiparty(random_complex(rng, D, D), dims)


class TestUnitarize:
    def test_scalars_move_between_factors(self, rng):
        U1, U2 = haar_unitary(2, rng), haar_unitary(3, rng)
        result = factorize_multiparty(np.kron(2 * U1, U2 / 2), [2, 3])
        unitaries = unitarize_factors(result)
        assert all(is_unitary(u) for u in unitaries)
        assert_allclose(np.kron(*unitaries), np.kron(U1, U2), atol=1e-12)
        assert_proportional(unitaries[0], U1)

    def test_worked_factors_stay_put(self, example_p_factors):
        unitaries = unitarize_factors(factorize_multiparty(kron_all(example_p_factors), [2, 2, 2]))
        for u, expected in zip(unitaries, example_p_factors):
            assert_proportional(u, expected)
            k = np.argmax(np.abs(expected))
            assert abs(u.flat[k] / expected.flat[k]) == pytest.approx(1.0)

    def test_non_unitary_factor_rejected(self):
        result = factorize_multiparty(np.kron(np.diag([1.0, 2.0]), np.eye(2)), [2, 2])
        with pytest.raises(DomainError):
            unitarize_factors(result)

    def test_scaled_unitary_product_rejected(self, rng):
        result = factorize_multiparty(3 * np.kron(haar_unitary(2, rng), haar_unitary(2, rng)), [2, 2])
        with pytest.raises(DomainError):
            unitarize_factors(result)
