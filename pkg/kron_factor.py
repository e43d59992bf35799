"""
KRON FACTOR: Is This Matrix a Tensor Product of Local Operators?

M = m_1 (x) m_2 (x) ... (x) m_N exactly when every party realignment
R(M_{i|i-hat}) has rank one. When it does, the factors come from the
leading singular triplet of the realigned matrix (the nearest Kronecker
product in Frobenius norm), peeled off one party at a time from party 1
outward.

Scalar gauge: factors are only defined up to scalars whose product is 1.
Every factor except the last is scaled to Frobenius norm sqrt(d_i) with its
largest-modulus entry real and positive; the last factor absorbs the rest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from linalg_products import (
    RANK_TOL,
    kron_all,
    numerical_rank,
    party_realignment,
    rank_one_gap,
    realign,
    singular_values,
    svd,
)
from tensor_core import DomainError, check_dims

logger = logging.getLogger(__name__)


class KronFactorizationError(DomainError):
    """Rank one failed on some party realignment."""

    def __init__(self, party: int, gap: float, message: str = ""):
        self.party = party
        self.gap = gap
        super().__init__(message or f"party {party} realignment is not rank one (gap {gap:.3e})")


@dataclass
class KronFactorization:
    """
    Factors m_1..m_N with M ~= m_1 (x) ... (x) m_N.

    Attributes:
        factors: d_i x d_i matrices, party order
        residual: ||M - kron(factors)|| / ||M||
        rank_gaps: sigma_2 / sigma_1 of each party realignment of M
        invertible: Whether every factor is nonsingular (the rank-one test
            itself does not need it)
    """

    factors: List[np.ndarray]
    residual: float
    rank_gaps: List[float] = field(default_factory=list)
    invertible: bool = True

    @property
    def dims(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    def reconstruct(self) -> np.ndarray:
        return kron_all(self.factors)


def _square_size(M, dims) -> np.ndarray:
    M = np.asarray(M, dtype=np.complex128)
    total = int(np.prod(dims))
    if M.shape != (total, total):
        raise DomainError(f"matrix shape {M.shape} does not match dims {list(dims)}")
    return M


def _party_ranks(M: np.ndarray, dims: tuple, tol: float) -> Tuple[List[int], List[float]]:
    ranks, gaps = [], []
    for i in range(1, len(dims) + 1):
        R = party_realignment(M, dims, i)
        ranks.append(numerical_rank(R, tol))
        gaps.append(rank_one_gap(R))
    return ranks, gaps


def is_kron(M, dims: Sequence[int], tol: float = RANK_TOL) -> Tuple[bool, List[float]]:
    """
    Rank-one realignment test on every party.

    Returns:
        ok: True iff every R(M_{i|i-hat}) has numerical rank 1
        gaps: sigma_2 / sigma_1 for each party, as evidence
    """
    dims = check_dims(dims)
    ranks, gaps = _party_ranks(_square_size(M, dims), dims, tol)
    return all(r == 1 for r in ranks), gaps


def factorize_bipartite(M, d1: int, d2: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Nearest Kronecker product m1 (x) m2 to a (d1*d2) x (d1*d2) matrix.

    vec(m1) = sqrt(s_1) u_1 and vec(m2) = sqrt(s_1) conj(v_1) from the
    leading singular triplet of R(M).

    Returns:
        m1, m2: The two factors
        residual: ||M - m1 (x) m2|| / ||M||
    """
    M = _square_size(M, (d1, d2))
    norm = np.linalg.norm(M)
    if norm == 0.0:
        raise DomainError("cannot factorize the zero matrix")
    U, s, V = svd(realign(M, d1, d2), full_matrices=False)
    root = np.sqrt(s[0])
    m1 = (root * U[:, 0]).reshape(d1, d1, order="F")
    m2 = (root * V[:, 0].conj()).reshape(d2, d2, order="F")
    residual = float(np.linalg.norm(M - np.kron(m1, m2)) / norm)
    return m1, m2, residual


def _fix_gauge(m: np.ndarray) -> Tuple[np.ndarray, complex]:
    """Scale m to norm sqrt(d) with a real positive largest entry; return (m', c) with m = c m'."""
    d = m.shape[0]
    flat = m.ravel()
    pivot = flat[np.argmax(np.abs(flat))]
    c = (np.linalg.norm(m) / np.sqrt(d)) * (pivot / abs(pivot))
    return m / c, c


def factorize_multiparty(M, dims: Sequence[int], tol: float = RANK_TOL) -> KronFactorization:
    """
    Split M into per-party factors, party 1 first.

    Raises:
        KronFactorizationError: naming the first party whose realignment is not
            rank one, or the worst-gap party when the peeled factors do not
            reconstruct M within 10 * tol
    """
    dims = check_dims(dims)
    M = _square_size(M, dims)
    if np.linalg.norm(M) == 0.0:
        raise DomainError("cannot factorize the zero matrix")

    ranks, gaps = _party_ranks(M, dims, tol)
    failed = [i for i, r in enumerate(ranks) if r != 1]
    if failed:
        raise KronFactorizationError(failed[0] + 1, gaps[failed[0]])

    factors = []
    cofactor = M
    for k, d in enumerate(dims[:-1]):
        rest = int(np.prod(dims[k + 1:]))
        m, cofactor, _ = factorize_bipartite(cofactor, d, rest)
        m, c = _fix_gauge(m)
        factors.append(m)
        cofactor = cofactor * c
    factors.append(cofactor)

    residual = float(np.linalg.norm(M - kron_all(factors)) / np.linalg.norm(M))
    if residual > 10 * tol:
        worst = int(np.argmax(gaps))
        raise KronFactorizationError(
            worst + 1, gaps[worst], f"peeled factors leave residual {residual:.3e}"
        )
    invertible = all(singular_values(f)[-1] > tol * singular_values(f)[0] for f in factors)
    logger.debug("factorized %s matrix over dims %s, residual %.2e", M.shape, dims, residual)
    return KronFactorization(factors=factors, residual=residual, rank_gaps=gaps,
                             invertible=invertible)


def unitarize_factors(f: KronFactorization, tol: float = 1e-8) -> List[np.ndarray]:
    """
    Rescale the factors of a unitary M so each one is unitary.

    For unitary M, (m_1 m_1^dag) (x) ... (x) (m_N m_N^dag) = I, so every
    m_i m_i^dag = a_i I with prod a_i = 1; dividing by sqrt(a_i) gives the
    unitary factors.

    Raises:
        DomainError: if some m_i m_i^dag is not a scalar matrix
    """
    unitaries = []
    for i, m in enumerate(f.factors, start=1):
        d = m.shape[0]
        gram = m @ m.conj().T
        a = float(np.real(np.trace(gram))) / d
        if a <= 0.0 or np.max(np.abs(gram - a * np.eye(d))) > tol * max(a, 1.0) * 10:
            raise DomainError(f"factor {i} is not proportional to a unitary")
        u = m / np.sqrt(a)
        if np.max(np.abs(u @ u.conj().T - np.eye(d))) > tol:
            raise DomainError(f"factor {i} is not unitary within {tol:g}")
        unitaries.append(u)
    scale = float(np.prod([np.linalg.norm(m) / np.sqrt(m.shape[0]) for m in f.factors]))
    if abs(scale - 1.0) > 10 * tol:
        raise DomainError(f"factors reconstruct a matrix of scale {scale:.6f}, not a unitary")
    return unitaries


if __name__ == "__main__":
    print("=" * 70)
    print("  KRON FACTOR: recovering local operators from their tensor product")
    print("=" * 70)
    P = kron_all([np.eye(2), np.array([[0, 1j], [1j, 0]]), np.array([[0, -1], [1, 0]])])
    result = factorize_multiparty(P, [2, 2, 2])
    for i, u in enumerate(unitarize_factors(result), start=1):
        print(f"\n  U_{i} =")
        print(np.round(u, 6))
    print(f"\n  residual = {result.residual:.2e}")
    print()
