"""
STATE CODEC: Quantum States as Coefficient Tensors

Pure state   |phi> = sum alpha_{j1..jN} |j1 ... jN>  ->  order-N tensor of alphas
Mixed state  rho   = sum x_{i1..iN} lambda_{i1-1} (x) ... (x) lambda_{iN-1}
                                                 ->  real tensor of dims d_k^2

The lambdas are generalized Gell-Mann matrices: lambda_0 = I, then the
symmetric, antisymmetric and diagonal generators, normalized so that
Tr(lambda_i lambda_j) = 2 delta_ij for i, j >= 1. Conjugating a local
lambda by M_k is a linear map on coefficients, the adjoint matrix L_k, so
(x) M_k acting on rho becomes (L_1, ..., L_N) acting on the coefficient
tensor.

State vectors and density matrices use the usual ket order: party 1 is the
most significant digit, the order on which M_1 (x) ... (x) M_N acts.
"""

from __future__ import annotations

import itertools
import logging
import string
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence, Tuple

import numpy as np

from linalg_products import eig_hermitian, kron_all, singular_values
from tensor_core import DomainError, Tensor, apply_local, check_dims

logger = logging.getLogger(__name__)

# --- Tolerances ---
STATE_TOL = 1e-10
RENORMALIZE_TOL = 1e-6
FORMAT_VERSION = 1        # bumps whenever the Gell-Mann enumeration order changes


class NotAStateError(DomainError):
    """A vector or matrix fails the invariants of a quantum state."""


@dataclass(frozen=True)
class QuantumState:
    """
    Pure or mixed state of N parties.

    Attributes:
        kind: "pure" (data is an amplitude vector of length prod(dims)) or
            "mixed" (data is a prod(dims) x prod(dims) density matrix)
        dims: Local dimensions d_1..d_N
        data: Amplitudes or density matrix, ket order

    Use ``QuantumState.pure`` / ``QuantumState.mixed`` to get validation.
    """

    kind: Literal["pure", "mixed"]
    dims: Tuple[int, ...]
    data: np.ndarray

    @classmethod
    def pure(cls, amplitudes, dims: Sequence[int]) -> "QuantumState":
        """
        Validated pure state. Norms within 1e-6 of one are renormalized with a
        warning, anything worse is rejected.
        """
        dims = check_dims(dims)
        psi = np.array(amplitudes, dtype=np.complex128).ravel()
        if psi.size != int(np.prod(dims)):
            raise NotAStateError(f"{psi.size} amplitudes do not match dims {list(dims)}")
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > STATE_TOL:
            if abs(norm - 1.0) > RENORMALIZE_TOL:
                raise NotAStateError(f"amplitude norm {norm:.9f} is not 1")
            logger.warning("renormalizing amplitudes with norm %.12f", norm)
            psi = psi / norm
        psi.setflags(write=False)
        return cls("pure", dims, psi)

    @classmethod
    def mixed(cls, rho, dims: Sequence[int]) -> "QuantumState":
        """Validated density matrix: Hermitian, unit trace, positive semidefinite."""
        dims = check_dims(dims)
        rho = np.asarray(rho, dtype=np.complex128)
        total = int(np.prod(dims))
        if rho.shape != (total, total):
            raise NotAStateError(f"density matrix shape {rho.shape} does not match dims {list(dims)}")
        if np.max(np.abs(rho - rho.conj().T)) > STATE_TOL:
            raise NotAStateError("density matrix is not Hermitian")
        trace = np.trace(rho)
        if abs(trace - 1.0) > STATE_TOL:
            raise NotAStateError(f"density matrix has trace {trace.real:.12f}")
        w, _ = eig_hermitian(rho)
        if w[0] < -STATE_TOL:
            raise NotAStateError(f"density matrix has negative eigenvalue {w[0]:.3e}")
        rho = 0.5 * (rho + rho.conj().T)
        rho.setflags(write=False)
        return cls("mixed", dims, rho)

    @property
    def n_parties(self) -> int:
        return len(self.dims)

    def density_matrix(self) -> np.ndarray:
        if self.kind == "mixed":
            return self.data
        return np.outer(self.data, self.data.conj())


@dataclass(frozen=True)
class GellMannBasis:
    """lambda_0 = I_d followed by the d^2 - 1 traceless generators, stacked (d^2, d, d)."""

    d: int
    elements: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        """Tr(lambda_i^2): d for the identity, 2 for the rest."""
        out = np.full(self.d * self.d, 2.0)
        out[0] = float(self.d)
        return out


@lru_cache(maxsize=None)
def gellmann(d: int) -> GellMannBasis:
    """
    Generalized Gell-Mann basis of d x d Hermitian matrices.

    Order: identity; symmetric E_jk + E_kj for j < k; antisymmetric
    -i (E_jk - E_kj) for j < k; diagonal sqrt(2/(l(l+1))) (sum_{m<=l} E_mm - l E_{l+1,l+1})
    for l = 1..d-1.
    """
    if d < 2:
        raise DomainError(f"Gell-Mann basis needs d >= 2, got {d}")
    elements = [np.eye(d, dtype=np.complex128)]
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    for j, k in pairs:
        m = np.zeros((d, d), dtype=np.complex128)
        m[j, k] = m[k, j] = 1.0
        elements.append(m)
    for j, k in pairs:
        m = np.zeros((d, d), dtype=np.complex128)
        m[j, k] = -1j
        m[k, j] = 1j
        elements.append(m)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        elements.append(np.sqrt(2.0 / (l * (l + 1))) * np.diag(diag).astype(np.complex128))
    stacked = np.array(elements)
    stacked.setflags(write=False)
    return GellMannBasis(d=d, elements=stacked)


@dataclass(frozen=True)
class AdjointRep:
    """
    Matrix L of the map lambda_{i-1} -> M lambda_{i-1} M^dag in Gell-Mann
    coordinates: M lambda_{i-1} M^dag = sum_j L[j-1, i-1] lambda_{j-1}.

    L is real for every M, since M lambda M^dag is Hermitian.
    """

    L: np.ndarray
    residual: float


def _letters(count: int) -> Tuple[str, ...]:
    return tuple(string.ascii_letters[:count])


def operator_to_tensor(operator, dims: Sequence[int]) -> Tensor:
    """
    Gell-Mann coefficients of any Hermitian operator on the product space.

    The coefficients come from the diagonal Gram system of the basis,
    x = Tr(O lambda_{i1} (x) ... (x) lambda_{iN}) / prod Tr(lambda_{ik}^2),
    which is what makes the reconstruction exact.
    """
    dims = check_dims(dims)
    total = int(np.prod(dims))
    operator = np.asarray(operator, dtype=np.complex128)
    if operator.shape != (total, total):
        raise DomainError(f"operator shape {operator.shape} does not match dims {list(dims)}")
    if np.max(np.abs(operator - operator.conj().T)) > STATE_TOL * max(1.0, np.linalg.norm(operator)):
        raise DomainError("operator is not Hermitian")

    n = len(dims)
    letters = _letters(3 * n)
    rows, cols, idx = letters[:n], letters[n:2 * n], letters[2 * n:]
    bases = [gellmann(d) for d in dims]
    # Tr(O (x)lambda) = sum_{a,b} O[a, b] prod_k lambda_k[b_k, a_k]
    subscripts = "".join(rows + cols) + "," + ",".join(
        idx[k] + cols[k] + rows[k] for k in range(n)) + "->" + "".join(idx)
    traces = np.einsum(subscripts, operator.reshape(dims + dims),
                       *[b.elements for b in bases], optimize=True)
    gram = bases[0].norms
    for b in bases[1:]:
        gram = np.multiply.outer(gram, b.norms)
    coefficients = traces / gram
    if np.max(np.abs(coefficients.imag)) > STATE_TOL * max(1.0, np.max(np.abs(coefficients))):
        raise DomainError("coefficients are not real; operator is not Hermitian")
    return Tensor(coefficients.real)


def tensor_to_operator(t: Tensor, dims: Sequence[int]) -> np.ndarray:
    """sum x_{i1..iN} lambda_{i1-1} (x) ... (x) lambda_{iN-1} as a matrix."""
    dims = check_dims(dims)
    expected = tuple(d * d for d in dims)
    if t.dims != expected:
        raise DomainError(f"coefficient tensor dims {list(t.dims)}, expected {list(expected)}")
    n = len(dims)
    letters = _letters(3 * n)
    rows, cols, idx = letters[:n], letters[n:2 * n], letters[2 * n:]
    subscripts = "".join(idx) + "," + ",".join(
        idx[k] + rows[k] + cols[k] for k in range(n)) + "->" + "".join(rows + cols)
    total = int(np.prod(dims))
    op = np.einsum(subscripts, t.data, *[gellmann(d).elements for d in dims], optimize=True)
    return op.reshape(total, total)


def pure_to_tensor(s: QuantumState) -> Tensor:
    """Order-N tensor of amplitudes, x_{j1..jN} = <j1 ... jN|phi>."""
    if s.kind != "pure":
        raise DomainError("pure_to_tensor needs a pure state")
    return Tensor(s.data.reshape(s.dims))


def tensor_to_pure(t: Tensor) -> QuantumState:
    """Pure state whose amplitudes are the (unit-norm) entries of t."""
    return QuantumState.pure(t.data.reshape(-1), t.dims)


def density_to_tensor(s: QuantumState) -> Tensor:
    """Real Gell-Mann coefficient tensor of a mixed state (dims d_k^2)."""
    if s.kind != "mixed":
        raise DomainError("density_to_tensor needs a mixed state")
    return operator_to_tensor(s.data, s.dims)


def tensor_to_density(t: Tensor, dims: Sequence[int]) -> QuantumState:
    """
    Mixed state with coefficient tensor t.

    Raises:
        NotAStateError: if the reconstructed matrix is not a density matrix
    """
    return QuantumState.mixed(tensor_to_operator(t, dims), dims)


def coefficient_formula_tensor(s: QuantumState) -> Tensor:
    """
    Coefficients from the closed formula
    x = 2^{M-N} (d_{k0} d_{k1} ... d_{kM})^{-1} Tr(rho lambda_{i1} (x) ... (x) lambda_{iN}),
    where M counts the identity slots k1..kM and d_{k0} = 1.

    Evaluated term by term; ``density_to_tensor`` is the fast path and the two
    agree under the Tr(lambda_i lambda_j) = 2 delta_ij normalization.
    """
    if s.kind != "mixed":
        raise DomainError("coefficient formula needs a mixed state")
    bases = [gellmann(d) for d in s.dims]
    n = len(s.dims)
    out = np.zeros(tuple(d * d for d in s.dims))
    for index in itertools.product(*[range(d * d) for d in s.dims]):
        op = kron_all([b.elements[i] for b, i in zip(bases, index)])
        identity_dims = [d for d, i in zip(s.dims, index) if i == 0]
        m = len(identity_dims)
        prefactor = 2.0 ** (m - n) / float(np.prod(identity_dims) if identity_dims else 1)
        out[index] = prefactor * np.real(np.trace(s.data @ op))
    return Tensor(out)


def adjoint_rep(M, d: int) -> AdjointRep:
    """
    Adjoint matrix of an invertible d x d operator M in the Gell-Mann basis.

    L[j, i] = Tr(lambda_j M lambda_i M^dag) / Tr(lambda_j^2); the identity row
    uses Tr(lambda_0^2) = d, the others 2.
    """
    M = np.asarray(M, dtype=np.complex128)
    if M.shape != (d, d):
        raise DomainError(f"operator shape {M.shape}, expected {(d, d)}")
    s = singular_values(M)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise DomainError("adjoint representation needs an invertible operator")
    basis = gellmann(d)
    lam = basis.elements
    conjugated = np.einsum("ab,ibc,dc->iad", M, lam, M.conj())
    L = np.einsum("jab,iba->ji", lam, conjugated) / basis.norms[:, None]
    L = L.real
    rebuilt = np.einsum("ji,jab->iab", L, lam)
    residual = float(np.max(np.abs(rebuilt - conjugated)))
    return AdjointRep(L=L, residual=residual)


def reduced_density(s: QuantumState, party: int) -> np.ndarray:
    """Single-party marginal rho_party (party numbered from 1)."""
    if not 1 <= party <= s.n_parties:
        raise DomainError(f"party {party} is outside 1..{s.n_parties}")
    k = party - 1
    n = s.n_parties
    tensor = s.density_matrix().reshape(s.dims + s.dims)
    letters = list(_letters(2 * n))
    rows, cols = letters[:n], letters[n:]
    for m in range(n):
        if m != k:
            cols[m] = rows[m]
    return np.einsum("".join(rows + cols) + "->" + rows[k] + cols[k], tensor)


def apply_local_state(s: QuantumState, ops: Sequence, normalize: bool = True) -> QuantumState:
    """
    (M_1 (x) ... (x) M_N) acting on a state: on the amplitudes for pure
    states, by conjugation for mixed ones. The result is renormalized.
    """
    if len(ops) != s.n_parties:
        raise DomainError(f"need {s.n_parties} local operators, got {len(ops)}")
    if s.kind == "pure":
        data = apply_local(pure_to_tensor(s), ops).data.reshape(-1)
        if normalize:
            data = data / np.linalg.norm(data)
        return QuantumState.pure(data, s.dims)
    K = kron_all(ops)
    rho = K @ s.data @ K.conj().T
    if normalize:
        rho = rho / np.trace(rho)
    return QuantumState.mixed(rho, s.dims)


# --- Fixtures ---

def ghz_state(n: int = 3) -> QuantumState:
    """(|0...0> + |1...1>) / sqrt(2)."""
    psi = np.zeros(2 ** n, dtype=np.complex128)
    psi[0] = psi[-1] = 1 / np.sqrt(2)
    return QuantumState.pure(psi, [2] * n)


def w_state(n: int = 3) -> QuantumState:
    """Equal superposition of the n single-excitation kets."""
    psi = np.zeros(2 ** n, dtype=np.complex128)
    for k in range(n):
        psi[1 << k] = 1 / np.sqrt(n)
    return QuantumState.pure(psi, [2] * n)


def example_psi_state() -> QuantumState:
    """(|000> + |001> + |110> - |111>) / 2, LU equivalent to GHZ."""
    psi = np.zeros(8, dtype=np.complex128)
    psi[0b000], psi[0b001], psi[0b110], psi[0b111] = 0.5, 0.5, 0.5, -0.5
    return QuantumState.pure(psi, [2, 2, 2])


def example_mixed_pair(a: float = 3.0, b: float = 5.0, c: float = 7.0
                       ) -> Tuple[QuantumState, QuantumState]:
    """
    Two three-qubit mixed states related by I (x) [[0,i],[i,0]] (x) [[0,-1],[1,0]].

    Both have spectrum {0, 1/c, 1/b, 1/a, 2, a, b, c} / K with
    K = 2 + a + b + c + 1/a + 1/b + 1/c.
    """
    if min(a, b, c) <= 0:
        raise DomainError("parameters a, b, c must be positive")
    K = 2 + a + b + c + 1 / a + 1 / b + 1 / c
    rho = np.diag([1, a, b, c, 1 / c, 1 / b, 1 / a, 1]).astype(np.complex128)
    rho[0, 7] = rho[7, 0] = 1
    rho_prime = np.diag([c, b, a, 1, 1, 1 / a, 1 / b, 1 / c]).astype(np.complex128)
    rho_prime[3, 4] = rho_prime[4, 3] = -1
    return (QuantumState.mixed(rho / K, [2, 2, 2]),
            QuantumState.mixed(rho_prime / K, [2, 2, 2]))


if __name__ == "__main__":
    print("=" * 70)
    print("  STATE CODEC: coefficient tensors")
    print("=" * 70)
    X = pure_to_tensor(ghz_state())
    print("\n  GHZ nonzero coefficients:")
    for index in zip(*np.nonzero(X.data)):
        print(f"    x_{''.join(str(i + 1) for i in index)} = {X.data[index].real:.6f}")
    rho, _ = example_mixed_pair()
    T = density_to_tensor(rho)
    print(f"\n  Mixed example: coefficient tensor dims {list(T.dims)}, "
          f"{np.count_nonzero(np.abs(T.data) > 1e-12)} nonzero entries")
    print()
