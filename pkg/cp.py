"""
CP DECOMPOSITION: Tensors as Sums of Rank-One Terms

X ~= sum_{r=1}^{R} a_r^(1) o a_r^(2) o ... o a_r^(N) = [[A_1, ..., A_N]]

and in unfolded form

X_(n) = A_n (A_N (.) ... (.) A_{n+1} (.) A_{n-1} (.) ... (.) A_1)^t.

The fit is computed by alternating least squares: each sweep solves, mode by
mode, the linear least-squares problem for A_n with the others fixed, using
the Gram identity (A (.) B)^t conj(A (.) B) = A^t conj(A) * B^t conj(B).

The smallest R reaching a fit threshold is only an upper-bound witness for
the tensor rank. ALS cannot certify lower bounds, and border-rank tensors
such as W can be approximated at a lower R with diverging factor norms.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from linalg_products import khatri_rao_all
from tensor_core import DomainError, Tensor, fold, frobenius_norm, unfold

logger = logging.getLogger(__name__)

# --- ALS constants ---
RIDGE = 1e-12
DIVERGENCE_NORM = 1e6     # balanced column norm beyond which a fit is treated as degenerate
MAX_RANK = 16


@dataclass(frozen=True)
class AlsOptions:
    """ALS settings. Restart k draws its start from default_rng([seed, k])."""

    max_iters: int = 500
    conv_tol: float = 1e-12
    restarts: int = 16
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.conv_tol < 0:
            raise DomainError(f"conv_tol must be >= 0, got {self.conv_tol}")
        if self.restarts < 1:
            raise DomainError(f"restarts must be >= 1, got {self.restarts}")
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")


@dataclass
class CpFactors:
    """
    Factor matrices A_1..A_N (each d_n x R) of a CP model.

    Attributes:
        factors: The factor matrices
        rank: R
        fit: 1 - ||X - reconstruct|| / ||X|| for the tensor it was fitted to
        fit_history: Fit after every sweep of the winning restart
        restart: Index of the winning restart
    """

    factors: List[np.ndarray]
    rank: int
    fit: float = 1.0
    fit_history: List[float] = field(default_factory=list)
    restart: int = 0

    @property
    def dims(self) -> tuple:
        return tuple(A.shape[0] for A in self.factors)

    @property
    def max_column_norm(self) -> float:
        if self.rank == 0:
            return 0.0
        return float(max(np.max(np.linalg.norm(A, axis=0)) for A in self.factors))


def _khatri_rao_except(factors: Sequence[np.ndarray], n: int, rank: int) -> np.ndarray:
    """A_N (.) ... (.) A_{n+1} (.) A_{n-1} (.) ... (.) A_1 (0-based n)."""
    others = [factors[m] for m in reversed(range(len(factors))) if m != n]
    if not others:
        return np.ones((1, rank), dtype=np.complex128)
    return khatri_rao_all(others)


def reconstruct(f: CpFactors) -> Tensor:
    """Full tensor with entries x_{i1..iN} = sum_r prod_n A_n[i_n, r]."""
    if any(A.shape[1] != f.rank for A in f.factors):
        raise DomainError("factor matrices must all have R columns")
    dims = f.dims
    if f.rank == 0:
        return Tensor.zeros(dims)
    A1 = np.asarray(f.factors[0], dtype=np.complex128)
    return fold(A1 @ _khatri_rao_except(f.factors, 0, f.rank).T, 1, dims)


def cp_fit(t: Tensor, f: CpFactors) -> float:
    """1 - ||X - [[A_1..A_N]]|| / ||X|| (1 when both are zero)."""
    norm = frobenius_norm(t)
    error = frobenius_norm(t - reconstruct(f))
    if norm == 0.0:
        return 1.0 if error == 0.0 else -np.inf
    return 1.0 - error / norm


def _balance(factors: List[np.ndarray]) -> None:
    """Equalize column norms across modes in place; the model is unchanged."""
    norms = np.array([np.linalg.norm(A, axis=0) for A in factors])
    if np.any(norms == 0.0):
        return
    target = np.exp(np.mean(np.log(norms), axis=0))
    for A, n in zip(factors, norms):
        A *= target / n


def _als_restart(t: Tensor, rank: int, opts: AlsOptions, index: int) -> CpFactors:
    rng = np.random.default_rng([opts.seed, index])
    dims = t.dims
    factors = [
        (rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))) / np.sqrt(2)
        for d in dims
    ]
    unfoldings = [unfold(t, n + 1) for n in range(t.order)]
    history: List[float] = []
    previous = -np.inf

    for sweep in range(opts.max_iters):
        for n in range(t.order):
            K = _khatri_rao_except(factors, n, rank)
            gram = np.ones((rank, rank), dtype=np.complex128)
            for m, A in enumerate(factors):
                if m != n:
                    gram *= A.T @ A.conj()
            ridge = RIDGE * max(1.0, float(np.real(np.trace(gram))) / rank)
            lhs = (gram + ridge * np.eye(rank)).T
            rhs = (unfoldings[n] @ K.conj()).T
            try:
                factors[n] = scipy.linalg.solve(lhs, rhs, assume_a="her").T
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
                factors[n] = scipy.linalg.lstsq(lhs, rhs)[0].T
        _balance(factors)

        current = cp_fit(t, CpFactors(factors, rank))
        history.append(current)
        if current - previous < opts.conv_tol:
            break
        previous = current

    logger.debug("ALS restart %d (R=%d): fit %.3e after %d sweeps",
                 index, rank, 1.0 - history[-1], len(history))
    return CpFactors(factors=factors, rank=rank, fit=history[-1],
                     fit_history=history, restart=index)


def als_fit(t: Tensor, R: int, opts: Optional[AlsOptions] = None) -> CpFactors:
    """
    Best rank-R CP model over all restarts.

    Args:
        t: Tensor to decompose
        R: Number of rank-one terms, 1 <= R <= 16
        opts: ALS settings (AlsOptions() if omitted)

    Returns:
        The restart with the highest fit (lowest index on ties)
    """
    opts = opts or AlsOptions()
    if not 1 <= R <= MAX_RANK:
        raise DomainError(f"rank must be in 1..{MAX_RANK}, got {R}")
    if frobenius_norm(t) == 0.0:
        zeros = [np.zeros((d, R), dtype=np.complex128) for d in t.dims]
        return CpFactors(factors=zeros, rank=R, fit=1.0, fit_history=[1.0])

    indices = range(opts.restarts)
    if opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(lambda k: _als_restart(t, R, opts, k), indices))
    else:
        results = [_als_restart(t, R, opts, k) for k in indices]

    best = max(results, key=lambda f: (f.fit, -f.restart))
    logger.info("ALS rank %d: best fit 1 - %.3e (restart %d of %d)",
                R, 1.0 - best.fit, best.restart, opts.restarts)
    return best


@dataclass
class RankEstimate:
    """
    Heuristic CP rank.

    ``rank`` is the smallest R whose fit reached the threshold without
    diverging factors. It is an upper-bound witness only. When no R up to
    R_max qualifies, ``exceeds`` is set and ``rank`` is R_max + 1.
    """

    rank: int
    factors: Optional[CpFactors]
    exceeds: bool = False
    fits: Dict[int, float] = field(default_factory=dict)
    upper_bound_only: bool = True

    @property
    def label(self) -> str:
        return f"{self.rank - 1}+" if self.exceeds else str(self.rank)


def estimate_rank(t: Tensor, fit_threshold: float = 1 - 1e-6, R_max: int = 8,
                  opts: Optional[AlsOptions] = None) -> RankEstimate:
    """Smallest R <= R_max whose best ALS fit reaches fit_threshold."""
    if not 0.0 < fit_threshold < 1.0:
        raise DomainError(f"fit_threshold must lie in (0, 1), got {fit_threshold}")
    if frobenius_norm(t) == 0.0:
        return RankEstimate(rank=0, factors=CpFactors(
            [np.zeros((d, 0), dtype=np.complex128) for d in t.dims], 0))

    fits: Dict[int, float] = {}
    for R in range(1, min(R_max, MAX_RANK) + 1):
        f = als_fit(t, R, opts)
        fits[R] = f.fit
        diverged = f.max_column_norm > DIVERGENCE_NORM
        if diverged:
            logger.info("rank %d fit %.3e rejected: factor norms diverge (%.2e)",
                        R, 1.0 - f.fit, f.max_column_norm)
        if f.fit >= fit_threshold and not diverged:
            return RankEstimate(rank=R, factors=f, fits=fits)
    return RankEstimate(rank=R_max + 1, factors=None, exceeds=True, fits=fits)


if __name__ == "__main__":
    print("=" * 70)
    print("  CP DECOMPOSITION: heuristic ranks of GHZ and W")
    print("=" * 70)
    ghz = np.zeros((2, 2, 2))
    ghz[0, 0, 0] = ghz[1, 1, 1] = 1 / np.sqrt(2)
    w = np.zeros((2, 2, 2))
    w[0, 0, 1] = w[0, 1, 0] = w[1, 0, 0] = 1 / np.sqrt(3)
    for name, data in (("GHZ", ghz), ("W", w)):
        estimate = estimate_rank(Tensor(data), R_max=4, opts=AlsOptions(restarts=8))
        fits = ", ".join(f"R={R}: 1-{1 - v:.1e}" for R, v in estimate.fits.items())
        print(f"  {name:4s} rank <= {estimate.label}   ({fits})")
    print()
