"""
TENSOR CORE: Coefficient Tensors and Their Unfoldings

A pure state of N parties is a multiway array of amplitudes x_{i1...iN}.
Everything the equivalence tests need is built on four moves:

- unfold:  lay the mode-n fibers side by side as the columns of X_(n)
- fold:    put them back
- apply:   act with one matrix per party, (A_1 x ... x A_N) X
- outer:   build rank-one tensors a_1 o a_2 o ... o a_N

Modes and indices are 1-based at the API (the way the formulas are written),
0-based inside numpy. Column j of X_(n) holds the fiber with
j = 1 + sum_{k != n} (i_k - 1) * beta_k, where beta_k is the product of the
dimensions of the non-n modes before k. The first remaining index therefore
runs fastest.
"""

from __future__ import annotations

import logging
from functools import reduce
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# --- Limits ---
MAX_ORDER = 8


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(ArithmeticError):
    """A dense numerical kernel failed (e.g. SVD did not converge)."""


class Tensor:
    """
    Dense complex N-way array with an explicit dimension vector.

    The array is stored with axes (i_1, ..., i_N). Its canonical
    linearization (``entries``) puts i_1 fastest, matching the column order
    of the unfoldings. Instances are read-only once built.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        """
        Args:
            data: Anything numpy can turn into an N-way array, 1 <= N <= 8
        """
        array = np.array(data, dtype=np.complex128)
        if array.ndim < 1 or array.ndim > MAX_ORDER:
            raise DomainError(f"tensor order must be in [1, {MAX_ORDER}], got {array.ndim}")
        if array.size == 0:
            raise DomainError("every dimension must be >= 1")
        array.setflags(write=False)
        self.data = array

    @classmethod
    def from_entries(cls, entries, dims: Sequence[int]) -> "Tensor":
        """Build a tensor from its canonical linearization (first index fastest)."""
        dims = check_dims(dims)
        entries = np.asarray(entries, dtype=np.complex128).ravel()
        if entries.size != int(np.prod(dims)):
            raise DomainError(
                f"{entries.size} entries do not fill a tensor of dims {list(dims)}"
            )
        return cls(entries.reshape(dims, order="F"))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "Tensor":
        return cls(np.zeros(check_dims(dims), dtype=np.complex128))

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.data.shape)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def entries(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def scale(self, factor: complex) -> "Tensor":
        return Tensor(self.data * factor)

    def conj(self) -> "Tensor":
        return Tensor(self.data.conj())

    def inner(self, other: "Tensor") -> complex:
        """Hermitian inner product <self, other> (conjugate-linear in self)."""
        if self.dims != other.dims:
            raise DomainError(f"dims differ: {self.dims} vs {other.dims}")
        return complex(np.vdot(self.data, other.data))

    def __add__(self, other: "Tensor") -> "Tensor":
        if self.dims != other.dims:
            raise DomainError(f"dims differ: {self.dims} vs {other.dims}")
        return Tensor(self.data + other.data)

    def __sub__(self, other: "Tensor") -> "Tensor":
        if self.dims != other.dims:
            raise DomainError(f"dims differ: {self.dims} vs {other.dims}")
        return Tensor(self.data - other.data)

    def __repr__(self):
        return f"Tensor(dims={list(self.dims)})"


def check_dims(dims: Sequence[int]) -> tuple:
    """Validate a dimension vector and return it as a tuple of ints."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_ORDER:
        raise DomainError(f"order must be in [1, {MAX_ORDER}], got {len(dims)}")
    if any(d < 1 for d in dims):
        raise DomainError(f"every dimension must be >= 1, got {list(dims)}")
    return dims


def _check_mode(n: int, order: int) -> int:
    if not 1 <= n <= order:
        raise DomainError(f"mode {n} is outside 1..{order}")
    return n - 1


def linear_index(multi_index: Sequence[int], dims: Sequence[int],
                 excluded_mode: Optional[int] = None) -> int:
    """
    Column index j of a fiber in the mode-n unfolding.

    j = 1 + sum_{k != n} (i_k - 1) * beta_k, with beta_k the product of the
    non-n dimensions that come before k. Without an excluded mode this is the
    canonical full linearization.

    Args:
        multi_index: 1-based indices. With an excluded mode either all N of
            them (i_n is ignored) or just the N-1 remaining ones
        dims: Tensor dimensions d_1..d_N
        excluded_mode: The mode n whose index does not enter j (1-based)

    Returns:
        j, 1-based
    """
    dims = check_dims(dims)
    index = [int(i) for i in multi_index]
    if excluded_mode is None:
        kept = list(range(len(dims)))
    else:
        n = _check_mode(excluded_mode, len(dims))
        kept = [k for k in range(len(dims)) if k != n]
        if len(index) == len(dims):
            index = [index[k] for k in kept]
    if len(index) != len(kept):
        raise DomainError(f"expected {len(kept)} indices, got {len(index)}")

    j = 1
    beta = 1
    for i_k, k in zip(index, kept):
        if not 1 <= i_k <= dims[k]:
            raise DomainError(f"index {i_k} out of range 1..{dims[k]} on mode {k + 1}")
        j += (i_k - 1) * beta
        beta *= dims[k]
    return j


def unfold(t: Tensor, n: int) -> np.ndarray:
    """
    Mode-n matricization X_(n), a d_n x (prod d / d_n) matrix.

    Columns are the mode-n fibers ordered by ``linear_index``.
    """
    axis = _check_mode(n, t.order)
    moved = np.moveaxis(t.data, axis, 0)
    return moved.reshape(t.dims[axis], -1, order="F")


def fold(m, n: int, dims: Sequence[int]) -> Tensor:
    """Inverse of ``unfold``: rebuild the tensor of shape ``dims`` from X_(n)."""
    dims = check_dims(dims)
    axis = _check_mode(n, len(dims))
    m = np.asarray(m, dtype=np.complex128)
    rest = dims[:axis] + dims[axis + 1:]
    expected = (dims[axis], int(np.prod(rest)))
    if m.shape != expected:
        raise DomainError(f"matrix shape {m.shape} does not fold on mode {n} of {list(dims)}")
    moved = m.reshape((dims[axis],) + rest, order="F")
    return Tensor(np.moveaxis(moved, 0, axis))


def apply_local(t: Tensor, ops: Sequence) -> Tensor:
    """
    Multilinear action (A_1 x A_2 x ... x A_N) X.

    Componentwise y_{j1..jN} = sum_{i} A_1[j1,i1] ... A_N[jN,iN] x_{i1..iN}.
    Each A_k may be rectangular; the result takes its row counts.
    """
    if len(ops) != t.order:
        raise DomainError(f"need {t.order} local operators, got {len(ops)}")
    data = t.data
    for axis, op in enumerate(ops):
        op = np.asarray(op, dtype=np.complex128)
        if op.ndim != 2 or op.shape[1] != data.shape[axis]:
            raise DomainError(
                f"operator {axis + 1} has shape {op.shape}, needs {data.shape[axis]} columns"
            )
        data = np.moveaxis(np.tensordot(op, data, axes=(1, axis)), 0, axis)
    return Tensor(data)


def outer(vectors: Sequence) -> Tensor:
    """Rank-one tensor v_1 o v_2 o ... o v_N."""
    if len(vectors) == 0:
        raise DomainError("outer product of an empty list")
    arrays = [np.asarray(v, dtype=np.complex128).ravel() for v in vectors]
    return Tensor(reduce(np.multiply.outer, arrays))


def frobenius_norm(t: Tensor) -> float:
    """Square root of the sum of squared moduli."""
    return float(np.linalg.norm(t.data.ravel()))


if __name__ == "__main__":
    print("=" * 70)
    print("  TENSOR CORE: the three mode-n matricizations of a 3x2x2 tensor")
    print("=" * 70)
    slices = np.stack([[[1, 2], [3, 4], [5, 6]], [[7, 8], [9, 10], [11, 12]]], axis=-1)
    X = Tensor(slices)
    for mode in (1, 2, 3):
        print(f"\n  X_({mode}) =")
        print(np.real(unfold(X, mode)).astype(int))
    print()
