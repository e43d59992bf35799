"""
LINALG PRODUCTS: Kronecker, Khatri-Rao, Hadamard and Realignment

The matrix toolkit behind every "rank(...) = 1" test:

- A (x) B     Kronecker product, blocks a_ij * B
- A (.) B     Khatri-Rao product, columnwise Kronecker
- A  *  B     Hadamard product, entrywise
- vec(Y)      columns stacked: y_11..y_m1, y_12..y_m2, ...
- R(Z)        realignment: row (i + m*j) of R(Z) is vec(Z_ij)^t

R(A (x) B) = vec(A) vec(B)^t, so a square matrix is a tensor product exactly
when its realignment has rank one. ``bipartite_block`` re-blocks a
multiparty matrix so that one party is the outer block structure, which
reduces the N-party test to the two-party one.
"""

from __future__ import annotations

import logging
from functools import reduce
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.stats import unitary_group

from tensor_core import DomainError, NumericError, check_dims

logger = logging.getLogger(__name__)

# --- Tolerances ---
RANK_TOL = 1e-8          # relative to the largest singular value
HERMITIAN_TOL = 1e-10


def _as_matrix(M, name="matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DomainError(f"{name} must be 2-D, got shape {M.shape}")
    return M


def kronecker(A, B) -> np.ndarray:
    """(alpha*gamma) x (beta*delta) Kronecker product, block (i,j) = a_ij B."""
    return np.kron(_as_matrix(A), _as_matrix(B))


def kron_all(matrices: Sequence) -> np.ndarray:
    """M_1 (x) M_2 (x) ... (x) M_N."""
    if len(matrices) == 0:
        raise DomainError("Kronecker product of an empty list")
    return reduce(kronecker, matrices)


def khatri_rao(A, B) -> np.ndarray:
    """Columnwise Kronecker product; column r is a_r (x) b_r."""
    A, B = _as_matrix(A), _as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise DomainError(f"Khatri-Rao needs equal column counts, got {A.shape[1]} and {B.shape[1]}")
    return np.einsum("ir,jr->ijr", A, B).reshape(A.shape[0] * B.shape[0], A.shape[1])


def khatri_rao_all(matrices: Sequence) -> np.ndarray:
    """P_1 (.) P_2 (.) ... (.) P_N."""
    if len(matrices) == 0:
        raise DomainError("Khatri-Rao product of an empty list")
    return reduce(khatri_rao, matrices)


def hadamard(A, B) -> np.ndarray:
    A, B = _as_matrix(A), _as_matrix(B)
    if A.shape != B.shape:
        raise DomainError(f"Hadamard product needs equal shapes, got {A.shape} and {B.shape}")
    return A * B


def vec(Y) -> np.ndarray:
    """Column vector of the stacked columns of Y."""
    return _as_matrix(Y).reshape(-1, 1, order="F")


def realign(Z, outer: int, inner: int) -> np.ndarray:
    """
    Realigned matrix R(Z).

    Z is viewed as an outer x outer grid of inner x inner blocks Z_ij. The
    result is outer^2 x inner^2 with rows vec(Z_11)^t, ..., vec(Z_m1)^t,
    vec(Z_12)^t, ..., vec(Z_mm)^t.
    """
    Z = _as_matrix(Z)
    m, n = int(outer), int(inner)
    if m < 1 or n < 1 or Z.shape != (m * n, m * n):
        raise DomainError(f"shape {Z.shape} is not a {m}x{m} grid of {n}x{n} blocks")
    # Z[i*n + k, j*n + l] -> grid[i, k, j, l]; row j*m + i, column l*n + k
    grid = Z.reshape(m, n, m, n)
    return grid.transpose(2, 0, 3, 1).reshape(m * m, n * n)


def bipartite_block(M, dims: Sequence[int], i: int) -> np.ndarray:
    """
    Re-block M so party i is the outer block structure.

    The remaining parties keep their natural order and form the inner
    blocks, so ``realign(bipartite_block(M, dims, i), d_i, D // d_i)`` is
    R(M_{i|i-hat}). Parties are numbered from 1.
    """
    dims = check_dims(dims)
    M = _as_matrix(M)
    total = int(np.prod(dims))
    if M.shape != (total, total):
        raise DomainError(f"matrix shape {M.shape} does not match dims {list(dims)}")
    if not 1 <= i <= len(dims):
        raise DomainError(f"party {i} is outside 1..{len(dims)}")
    n = len(dims)
    order = [i - 1] + [k for k in range(n) if k != i - 1]
    tensor = M.reshape(dims + dims)
    return tensor.transpose(order + [n + k for k in order]).reshape(total, total)


def party_realignment(M, dims: Sequence[int], i: int) -> np.ndarray:
    """R(M_{i|i-hat}) for party i."""
    dims = check_dims(dims)
    d_i = dims[i - 1]
    return realign(bipartite_block(M, dims, i), d_i, int(np.prod(dims)) // d_i)


def singular_values(M) -> np.ndarray:
    """Singular values, descending."""
    M = _as_matrix(M)
    try:
        return scipy.linalg.svdvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular values did not converge: {exc}") from exc


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    """Number of singular values above tol * sigma_1 (0 for the zero matrix)."""
    if tol <= 0:
        raise DomainError(f"rank tolerance must be positive, got {tol}")
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def rank_one_gap(M) -> float:
    """sigma_2 / sigma_1, the distance from rank one (0 for rank <= 1)."""
    s = singular_values(M)
    if s.size < 2 or s[0] == 0.0:
        return 0.0
    return float(s[1] / s[0])


def svd(M, full_matrices: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Singular value decomposition M = U diag(s) V^dagger.

    Returns:
        U: Left singular vectors (columns)
        s: Singular values, descending
        V: Right singular vectors (columns), note V and not V^dagger
    """
    M = _as_matrix(M)
    try:
        U, s, Vh = scipy.linalg.svd(M, full_matrices=full_matrices, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd failed on %s matrix, retrying with gesvd", M.shape)
        try:
            U, s, Vh = scipy.linalg.svd(M, full_matrices=full_matrices, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"SVD did not converge: {exc}") from exc
    return U, s, Vh.conj().T


def eig_hermitian(H, tol: float = HERMITIAN_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """
    Spectral decomposition H = Q diag(w) Q^dagger of a Hermitian matrix.

    H is symmetrized before decomposing; an asymmetry above tol (relative to
    max(1, ||H||)) is rejected.

    Returns:
        w: Eigenvalues, ascending
        Q: Unitary matrix of eigenvectors (columns)
    """
    H = _as_matrix(H)
    if H.shape[0] != H.shape[1]:
        raise DomainError(f"Hermitian matrix must be square, got {H.shape}")
    asymmetry = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if asymmetry > tol * max(1.0, np.linalg.norm(H)):
        raise DomainError(f"matrix is not Hermitian (asymmetry {asymmetry:.3e})")
    try:
        w, Q = scipy.linalg.eigh(0.5 * (H + H.conj().T))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition did not converge: {exc}") from exc
    return w, Q


def polar_unitary(M) -> np.ndarray:
    """Unitary factor of the polar decomposition M = U P."""
    U, _ = scipy.linalg.polar(_as_matrix(M))
    return U


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x d unitary."""
    if d == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(d, random_state=rng)


def is_unitary(M, tol: float = 1e-8) -> bool:
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        return False
    return bool(np.max(np.abs(M @ M.conj().T - np.eye(M.shape[0]))) <= tol)


if __name__ == "__main__":
    print("=" * 70)
    print("  LINALG PRODUCTS: realignment detects tensor products")
    print("=" * 70)
    rng = np.random.default_rng(7)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    swap = np.eye(4)[[0, 2, 1, 3]]
    print(f"  rank R(A (x) B) = {numerical_rank(realign(kronecker(A, B), 2, 2))}")
    print(f"  rank R(I_4)     = {numerical_rank(realign(np.eye(4), 2, 2))}")
    print(f"  rank R(SWAP)    = {numerical_rank(realign(swap, 2, 2))}")
    print()
