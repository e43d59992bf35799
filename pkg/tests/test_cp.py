import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_complex
from cp import AlsOptions, CpFactors, als_fit, cp_fit, estimate_rank, reconstruct
from linalg_products import khatri_rao_all
from state_codec import ghz_state, pure_to_tensor, w_state
from tensor_core import DomainError, Tensor, apply_local, outer, unfold


def planted(rng, dims, rank):
    factors = [random_complex(rng, d, rank) for d in dims]
    return reconstruct(CpFactors(factors, rank)), factors


def assert_unfolded_model(f: CpFactors):
    """X_(n) = A_n (A_N (.) ... (.) A_{n+1} (.) A_{n-1} (.) ... (.) A_1)^t on every mode."""
    X = reconstruct(f)
    N = len(f.factors)
    for n in range(N):
        others = [f.factors[m] for m in reversed(range(N)) if m != n]
        expected = f.factors[n] @ khatri_rao_all(others).T
        assert np.max(np.abs(unfold(X, n + 1) - expected)) <= 1e-10 * max(1.0, np.linalg.norm(expected))


def test_rank_one_reconstruction_is_outer_product(rng):
    vectors = [random_complex(rng, d) for d in (2, 3, 2)]
    f = CpFactors([v.reshape(-1, 1) for v in vectors], 1)
    assert_allclose(reconstruct(f).data, outer(vectors).data, atol=1e-14)


def test_reconstruct_rejects_ragged_factors():
    with pytest.raises(DomainError):
        reconstruct(CpFactors([np.ones((2, 2)), np.ones((2, 3))], 2))


def test_planted_rank_three(rng):
    X, _ = planted(rng, (4, 4, 4), 3)
    f = als_fit(X, 3, AlsOptions(restarts=8, max_iters=2000, seed=1))
    assert f.fit >= 1 - 1e-8
    assert f.fit == pytest.approx(cp_fit(X, f), abs=1e-12)
    assert_unfolded_model(f)


def test_every_fit_satisfies_unfolded_model(rng):
    X = Tensor(random_complex(rng, 3, 2, 4))
    for R in (1, 2, 3):
        assert_unfolded_model(als_fit(X, R, AlsOptions(restarts=2, max_iters=50)))


def test_fit_history_is_recorded(rng):
    X, _ = planted(rng, (3, 3, 3), 2)
    f = als_fit(X, 2, AlsOptions(restarts=3, max_iters=100))
    assert len(f.fit_history) >= 1
    assert f.fit_history[-1] == f.fit
    assert 0 <= f.restart < 3


def test_fit_never_decreases_between_sweeps(rng):
    for X in (planted(rng, (3, 3, 3), 2)[0], Tensor(random_complex(rng, 3, 2, 4))):
        for R in (1, 2, 3):
            f = als_fit(X, R, AlsOptions(restarts=3, max_iters=200))
            assert np.all(np.diff(f.fit_history) >= -1e-10)


def test_rank_is_invariant_under_local_invertible_maps(rng):
    X = pure_to_tensor(ghz_state())
    ops = [2 * np.eye(2) + 0.5 * random_complex(rng, 2, 2) for _ in range(3)]
    Y = apply_local(X, ops)
    opts = AlsOptions(restarts=8)
    assert estimate_rank(X, R_max=3, opts=opts).rank == 2
    assert estimate_rank(Y, R_max=3, opts=opts).rank == 2


def test_same_seed_same_model(rng):
    X = Tensor(random_complex(rng, 2, 3, 2))
    a = als_fit(X, 2, AlsOptions(restarts=4, seed=9))
    b = als_fit(X, 2, AlsOptions(restarts=4, seed=9, workers=2))
    assert a.restart == b.restart
    assert a.fit == pytest.approx(b.fit, abs=1e-12)


def test_ghz_rank_two():
    estimate = estimate_rank(pure_to_tensor(ghz_state()), R_max=3, opts=AlsOptions(restarts=8))
    assert estimate.rank == 2
    assert not estimate.exceeds
    assert estimate.upper_bound_only
    assert estimate.fits[1] < 0.5


def test_w_needs_more_than_one_term():
    estimate = estimate_rank(pure_to_tensor(w_state()), R_max=1, opts=AlsOptions(restarts=4))
    assert estimate.exceeds
    assert estimate.label == "1+"
    assert estimate.factors is None


def test_w_rank_three():
    estimate = estimate_rank(pure_to_tensor(w_state()), 1 - 1e-6, R_max=3)
    assert estimate.rank == 3
    assert not estimate.exceeds


def test_zero_tensor():
    Z = Tensor.zeros((2, 2, 2))
    assert estimate_rank(Z).rank == 0
    assert als_fit(Z, 2).fit == 1.0


def test_option_validation():
    with pytest.raises(DomainError):
        AlsOptions(restarts=0)
    with pytest.raises(DomainError):
        AlsOptions(max_iters=0)
    with pytest.raises(DomainError):
        AlsOptions(workers=0)
    with pytest.raises(DomainError):
        als_fit(Tensor(np.ones((2, 2))), 17)
    with pytest.raises(DomainError):
        estimate_rank(Tensor(np.ones((2, 2))), fit_threshold=1.5)
