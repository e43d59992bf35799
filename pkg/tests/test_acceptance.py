"""End-to-end reproduction of the two worked examples and the statistical suites."""

import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import cos_sin_state
from equivalence import (
    LocalWitness,
    Outcome,
    SearchOptions,
    WitnessMode,
    brute_force_local_search,
    generate_equivalent_pair,
    mixed_lu_check,
    pure_lu_check,
    pure_slocc_check,
    verify_mixed_witness,
    verify_witness,
)
from linalg_products import eig_hermitian, is_unitary, kron_all
from state_codec import QuantumState, pure_to_tensor
from tensor_core import unfold


def test_worked_unfoldings(slices_tensor):
    assert_array_equal(unfold(slices_tensor, 1).real.astype(int),
                       [[1, 2, 7, 8], [3, 4, 9, 10], [5, 6, 11, 12]])
    assert_array_equal(unfold(slices_tensor, 2).real.astype(int),
                       [[1, 3, 5, 7, 9, 11], [2, 4, 6, 8, 10, 12]])
    assert_array_equal(unfold(slices_tensor, 3).real.astype(int),
                       [[1, 3, 5, 2, 4, 6], [7, 9, 11, 8, 10, 12]])


def test_ghz_slocc(ghz, psi):
    start = time.perf_counter()
    verdict = pure_slocc_check(ghz, psi)
    elapsed = time.perf_counter() - start
    assert verdict.outcome is Outcome.EQUIVALENT
    assert verdict.residual <= 1e-10
    assert max(verdict.diagnostics["q_rank_one_gaps"]) <= 1e-10
    assert elapsed < 1.0


def test_ghz_lu_and_printed_operators(ghz, psi, example_ops):
    verdict = pure_lu_check(ghz, psi)
    assert verdict.outcome is Outcome.EQUIVALENT
    for u in verdict.witness.matrices:
        assert np.max(np.abs(u @ u.conj().T - np.eye(2))) <= 1e-8

    M1, M2, M3 = example_ops
    assert all(is_unitary(m, 1e-15) for m in example_ops)
    X, Y = pure_to_tensor(ghz), pure_to_tensor(psi)
    assert_allclose(unfold(Y, 1), M1 @ unfold(X, 1) @ np.kron(M3, M2).T, atol=1e-12)


def test_mixed_example(mixed_pair, example_p_factors):
    rho, rho_prime = mixed_pair
    K = 2 + 3 + 5 + 7 + 1 / 3 + 1 / 5 + 1 / 7
    expected = np.sort(np.array([0, 1 / 7, 1 / 5, 1 / 3, 2, 3, 5, 7]) / K)
    for state in mixed_pair:
        assert_allclose(eig_hermitian(state.data)[0], expected, atol=1e-10)

    start = time.perf_counter()
    verdict = mixed_lu_check(rho, rho_prime)
    elapsed = time.perf_counter() - start
    assert verdict.outcome is Outcome.EQUIVALENT
    assert elapsed < 10.0

    phases = []
    for u, target in zip(verdict.witness.matrices, example_p_factors):
        k = np.argmax(np.abs(target))
        phase = u.flat[k] / target.flat[k]
        assert_allclose(u, phase * target, atol=1e-6)
        phases.append(phase)
    # the global phase of P is unobservable in P rho P^dag
    assert abs(np.prod(phases)) == pytest.approx(1.0, abs=1e-6)


def test_negative_lu_control(ghz):
    verdict = pure_lu_check(ghz, cos_sin_state(np.pi / 5))
    assert verdict.outcome is Outcome.NOT_EQUIVALENT
    assert verdict.certificate.invariant == "unfolding singular values"


def _completeness(dims, count, kind="pure"):
    outcomes = []
    for seed in range(count):
        first, second, _ = generate_equivalent_pair(dims, "lu", seed, kind=kind)
        if kind == "pure":
            verdict = pure_lu_check(first, second, SearchOptions(seed=seed))
        else:
            verdict = mixed_lu_check(first, second, SearchOptions(seed=seed))
        assert verdict.outcome is not Outcome.NOT_EQUIVALENT, f"seed {seed}"
        if verdict.outcome is Outcome.EQUIVALENT:
            if kind == "pure":
                residual = verify_witness(pure_to_tensor(first), pure_to_tensor(second),
                                          verdict.witness).residual
            else:
                residual = verify_mixed_witness(first, second, verdict.witness)
            assert residual <= 1e-8, f"seed {seed}"
        outcomes.append(verdict.outcome)
    return sum(o is Outcome.EQUIVALENT for o in outcomes) / count


@pytest.mark.slow
@pytest.mark.parametrize("dims", [[2, 2, 2], [2, 2, 2, 2], [3, 3, 3], [3, 3, 2]])
def test_lu_pairs_completeness(dims):
    assert _completeness(dims, 200) >= 0.95


@pytest.mark.slow
def test_mixed_lu_pairs_completeness():
    assert _completeness([2, 2, 2], 100, kind="mixed") >= 0.95


@pytest.mark.slow
def test_oracle_agreement():
    agree = 0
    total = 50
    for seed in range(total):
        if seed % 2 == 0:
            first, second, _ = generate_equivalent_pair([2, 2, 2], "lu", seed)
        else:
            rng = np.random.default_rng([seed, 31])
            first, second = (QuantumState.pure(v / np.linalg.norm(v), [2, 2, 2])
                             for v in rng.normal(size=(2, 8)) + 1j * rng.normal(size=(2, 8)))
        X, Y = pure_to_tensor(first), pure_to_tensor(second)
        verdict = pure_lu_check(first, second, SearchOptions(seed=seed))
        oracle = brute_force_local_search(X, Y, WitnessMode.UNITARY, seed=seed)
        found = oracle.residual < 1e-6
        equivalent = verdict.outcome is Outcome.EQUIVALENT
        if equivalent:
            assert isinstance(verdict.witness, LocalWitness)
            assert found, f"seed {seed}: equivalent but the oracle found no witness"
        if found == equivalent:
            agree += 1
        else:
            assert verdict.outcome is Outcome.INCONCLUSIVE and found
    assert agree / total >= 0.95


def test_worked_witness_matches_kron_of_printed_operators(ghz, psi, example_ops):
    w = LocalWitness(tuple(example_ops), WitnessMode.UNITARY)
    X, Y = pure_to_tensor(ghz), pure_to_tensor(psi)
    assert verify_witness(X, Y, w).residual <= 1e-12
    K = kron_all(example_ops)
    assert_allclose(K @ ghz.data, psi.data, atol=1e-12)
