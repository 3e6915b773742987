"""
Sparse Assembly Module.

Builds the complex gain system (G, β) and the equality-constrained KKT
system, and solves them with a sparse LU factorization.

Gain system
-----------
The measurement rows are closed under conjugation before the products are
formed: every row h_i contributes itself and its conjugate h̄_i, whose
Jacobian blocks are (conj(H_x̄), conj(H_x)). With S the stacked 2m×2n
Jacobian and W2 = [W; W]:

    G = S̄ᵀ W2 S        β = S̄ᵀ W2 [r; r̄]

so that G_x̄x is Hermitian, G_x̄x̄ is symmetric, G_xx = conj(G_x̄x̄) and
β_x = conj(β_x̄) hold by construction.

KKT system
----------
Unknowns [Δx; Δy; λ; μ] with Δy the conjugate-variable step, λ one
multiplier per constraint row and μ one per complex constraint row:

    [ G_x̄x   G_x̄x̄   J̄_xᵀ   J_x̄ᵀ ] [Δx]   [ β_x̄ ]
    [ G_xx   G_xx̄   J̄_x̄ᵀ   J_xᵀ ] [Δy] = [ β_x  ]
    [ J_x    J_x̄    0      0    ] [λ ]   [ -s   ]
    [ J̄_x̄    J̄_x    0      0    ] [μ ]   [ -s̄   ]

Real-valued constraint rows (the slack angle) equal their own conjugate,
so they appear once and carry no μ entry.
"""

from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import ContextManager, Optional, Union

import numpy as np
from scipy.sparse import bmat, coo_matrix, csc_matrix, csr_matrix, issparse, spmatrix, triu
from scipy.sparse.linalg import splu

from utils.timing import PhaseTimer

from .complex_kernels import KernelBackend, cdot, cfma2, pack_pairs, unpack_pairs
from .errors import DimensionError, SingularSystemError
from .measurement_model import conjugate_rows

logger = logging.getLogger(__name__)

SINGULAR_MESSAGE = "unobservable or dependent constraints"
RELATIVE_PIVOT_FLOOR = 1e-13
REFINEMENT_TRIGGER = 1e-10


@dataclass
class GainSystem:
    """All four gain blocks and both right-hand-side blocks (n×n / length n)."""

    g_xbar_x: csr_matrix
    g_xbar_xbar: csr_matrix
    g_x_x: csr_matrix
    g_x_xbar: csr_matrix
    beta_xbar: np.ndarray
    beta_x: np.ndarray

    @property
    def n(self) -> int:
        return self.g_xbar_x.shape[0]

    def full(self) -> csr_matrix:
        """The 2n×2n gain matrix in [x̄-equations; x-equations] order."""
        return bmat(
            [[self.g_xbar_x, self.g_xbar_xbar], [self.g_x_x, self.g_x_xbar]], format="csr"
        )

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.beta_xbar, self.beta_x])


@dataclass
class KktSystem:
    """Assembled system matrix (CSC) and right-hand side."""

    matrix: csc_matrix
    rhs: np.ndarray
    n: int
    c: int
    k: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class KktSolution:
    """Split solution vector of a KKT (or plain gain) solve."""

    dx: np.ndarray
    dy: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    residual: float = 0.0
    pivot_ratio: float = 1.0

    @property
    def conjugate_pair_error(self) -> float:
        return conjugate_pair_error(self)


@dataclass
class Factorization:
    """splu factors with pivot diagnostics."""

    lu: object
    pivot_ratio: float
    min_pivot: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs))


def _phase(timer: Optional[PhaseTimer], name: str) -> ContextManager:
    return timer.phase(name) if timer is not None else nullcontext()


# --------------------------------------------------------------------------
# Gain assembly
# --------------------------------------------------------------------------

def _stack_conjugate_rows(Hx: spmatrix, Hxbar: spmatrix) -> csr_matrix:
    stacked = bmat(
        [[Hx, Hxbar], [Hxbar.conjugate(), Hx.conjugate()]], format="csr", dtype=np.complex128
    )
    stacked.sum_duplicates()
    stacked.sort_indices()
    return stacked


def _accumulate(
    target: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    size: int,
    backend: KernelBackend,
) -> np.ndarray:
    """
    acc[target_i] += left_i · right_i through the paired FMA kernel.

    Contributions to one target are applied in input order; round t applies
    the t-th contribution of every target at once.
    """
    acc = np.zeros(size, dtype=np.complex128)
    if target.size == 0:
        return acc
    order = np.argsort(target, kind="stable")
    target, left, right = target[order], left[order], right[order]
    starts = np.flatnonzero(np.r_[True, target[1:] != target[:-1]])
    counts = np.diff(np.r_[starts, target.size])
    rank = np.arange(target.size) - np.repeat(starts, counts)
    for t in range(int(counts.max())):
        chosen = rank == t
        idx = target[chosen]
        acc[idx] = unpack_pairs(
            cfma2(pack_pairs(left[chosen]), pack_pairs(right[chosen]), pack_pairs(acc[idx]), backend),
            idx.size,
        )
    return acc


def assemble_gain(
    W: np.ndarray,
    r: np.ndarray,
    Hx: spmatrix,
    Hxbar: spmatrix,
    backend: KernelBackend = KernelBackend.VECTOR,
) -> GainSystem:
    """
    Form G = S̄ᵀ W S and β = S̄ᵀ W [r; r̄].

    β_j is the kernel dot product of column j of S̄ with W [r; r̄]. Every
    ordered pair (a, b) of stored entries within a stacked row contributes
    w·conj(S_a)·S_b to G[col_a, col_b], accumulated in row order with the
    paired FMA kernel.

    Raises:
        DimensionError: row counts of W, r, Hx and Hxbar disagree, or Hx and
            Hxbar differ in shape.
    """
    W = np.asarray(W, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.complex128).ravel()
    if Hx.shape != Hxbar.shape:
        raise DimensionError(f"Hx {Hx.shape} and Hxbar {Hxbar.shape} differ in shape")
    m, n = Hx.shape
    if W.size != m or r.size != m:
        raise DimensionError(f"expected {m} weights and residuals, got {W.size} and {r.size}")
    if np.any(W < 0):
        raise DimensionError("weights must be non-negative")

    S = _stack_conjugate_rows(Hx, Hxbar)
    w2 = np.concatenate([W, W])
    wr = w2 * np.concatenate([r, np.conj(r)])

    columns = S.tocsc()
    columns.sort_indices()
    beta = np.zeros(2 * n, dtype=np.complex128)
    for j in range(2 * n):
        lo, hi = columns.indptr[j], columns.indptr[j + 1]
        if hi > lo:
            beta[j] = cdot(columns.data[lo:hi], wr[columns.indices[lo:hi]], conjugate_a=True, backend=backend)

    # every ordered pair of stored entries within a row
    lengths = np.diff(S.indptr)
    starts = S.indptr[:-1]
    pair_counts = lengths * lengths
    total = int(pair_counts.sum())
    pair_row = np.repeat(np.arange(2 * m), pair_counts)
    offset = np.arange(total) - np.repeat(np.cumsum(pair_counts) - pair_counts, pair_counts)
    width = lengths[pair_row]
    left = starts[pair_row] + offset // np.maximum(width, 1)
    right = starts[pair_row] + offset % np.maximum(width, 1)

    keys = S.indices[left].astype(np.int64) * (2 * n) + S.indices[right]
    entries, target = np.unique(keys, return_inverse=True)
    values = _accumulate(
        target.ravel(), np.conj(S.data[left]) * w2[pair_row], S.data[right], entries.size, backend
    )
    G = coo_matrix((values, (entries // (2 * n), entries % (2 * n))), shape=(2 * n, 2 * n)).tocsr()
    G.eliminate_zeros()
    G.sort_indices()

    return GainSystem(
        g_xbar_x=G[:n, :n].tocsr(),
        g_xbar_xbar=G[:n, n:].tocsr(),
        g_x_x=G[n:, :n].tocsr(),
        g_x_xbar=G[n:, n:].tocsr(),
        beta_xbar=beta[:n],
        beta_x=beta[n:],
    )


# --------------------------------------------------------------------------
# KKT assembly
# --------------------------------------------------------------------------

def assemble_kkt(
    g: GainSystem,
    s: np.ndarray,
    Jx: spmatrix,
    Jxbar: spmatrix,
    real_rows: Optional[int] = None,
) -> KktSystem:
    """
    Assemble the constrained normal equations.

    Args:
        g: Gain system.
        s: Constraint values (length c).
        Jx, Jxbar: Constraint Jacobian blocks (c×n).
        real_rows: Trailing rows of `s` that are real-valued and enter once.
            Defaults to 1 when constraints are present (the slack row).

    Returns:
        KktSystem of dimension 2n + c + k, k = c - real_rows. With c = 0 this
        is the plain 2n gain system.
    """
    n = g.n
    s = np.asarray(s, dtype=np.complex128).ravel()
    c = s.size
    if Jx.shape != (c, n) or Jxbar.shape != (c, n):
        raise DimensionError(
            f"constraint blocks must be {c}x{n}, got Jx {Jx.shape} and Jxbar {Jxbar.shape}"
        )
    if real_rows is None:
        real_rows = 1 if c else 0
    if not 0 <= real_rows <= c:
        raise DimensionError(f"real_rows={real_rows} outside 0..{c}")
    k = c - real_rows

    if c == 0:
        matrix = g.full().tocsc()
        rhs = g.rhs()
    else:
        Jx = csr_matrix(Jx, dtype=np.complex128)
        Jxbar = csr_matrix(Jxbar, dtype=np.complex128)
        s_bar, cj_x, cj_xbar = conjugate_rows(s[:k], Jx[:k], Jxbar[:k])
        zero_cc = csr_matrix((c, c), dtype=np.complex128)
        blocks = [
            [g.g_xbar_x, g.g_xbar_xbar, Jx.conjugate().T],
            [g.g_x_x, g.g_x_xbar, Jxbar.conjugate().T],
            [Jx, Jxbar, zero_cc],
        ]
        if k:
            blocks[0].append(cj_x.conjugate().T)
            blocks[1].append(cj_xbar.conjugate().T)
            blocks[2].append(csr_matrix((c, k), dtype=np.complex128))
            blocks.append(
                [
                    cj_x,
                    cj_xbar,
                    csr_matrix((k, c), dtype=np.complex128),
                    csr_matrix((k, k), dtype=np.complex128),
                ]
            )
        matrix = bmat(blocks, format="csc", dtype=np.complex128)
        rhs = np.concatenate([g.beta_xbar, g.beta_x, -s, -s_bar])

    matrix.eliminate_zeros()
    matrix.sort_indices()
    return KktSystem(matrix=matrix, rhs=rhs, n=n, c=c, k=k)


# --------------------------------------------------------------------------
# Factorization and solve
# --------------------------------------------------------------------------

def factorize(matrix: spmatrix, pivot_threshold: float = 0.1) -> Factorization:
    """
    Sparse LU with a fill-reducing column ordering on the symmetrised pattern
    and threshold partial pivoting.

    Raises:
        SingularSystemError: exactly zero pivot, or a pivot below
            1e-13 times the largest one. `pivot` is the original column
            index when it can be identified.
    """
    A = csc_matrix(matrix)
    A = A.astype(np.result_type(A.dtype, np.float64))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix must be square, got {A.shape}")
    if A.shape[0] == 0:
        raise DimensionError("cannot factorize an empty matrix")
    try:
        lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=pivot_threshold)
    except RuntimeError as e:
        logger.debug("splu failed: %s", e)
        raise SingularSystemError(SINGULAR_MESSAGE) from e

    pivots = np.abs(lu.U.diagonal())
    largest = float(pivots.max())
    smallest = float(pivots.min())
    if not np.isfinite(largest) or smallest <= RELATIVE_PIVOT_FLOOR * largest:
        position = int(np.argmin(pivots))
        column = int(np.flatnonzero(lu.perm_c == position)[0])
        raise SingularSystemError(SINGULAR_MESSAGE, pivot=column)

    ratio = largest / smallest
    logger.debug("factorized %d x %d, nnz(L+U)=%d, pivot ratio %.3e",
                 A.shape[0], A.shape[1], lu.L.nnz + lu.U.nnz, ratio)
    return Factorization(lu=lu, pivot_ratio=ratio, min_pivot=smallest)


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def solve_with_refinement(
    matrix: spmatrix,
    rhs: np.ndarray,
    pivot_threshold: float = 0.1,
    timer: Optional[PhaseTimer] = None,
) -> tuple[np.ndarray, float, float]:
    """
    Factorize, solve, and apply one round of iterative refinement when the
    residual exceeds 1e-10·‖rhs‖∞.

    Returns:
        (solution, final residual ∞-norm, pivot ratio)
    """
    with _phase(timer, "factor"):
        fact = factorize(matrix, pivot_threshold)
    with _phase(timer, "solve"):
        rhs = np.asarray(rhs)
        sol = fact.solve(rhs)
        residual = matrix @ sol - rhs
        res_norm = _inf_norm(residual)
        if res_norm > REFINEMENT_TRIGGER * _inf_norm(rhs):
            sol = sol - fact.solve(residual)
            res_norm = _inf_norm(matrix @ sol - rhs)
            logger.debug("iterative refinement applied, residual now %.3e", res_norm)
    return sol, res_norm, fact.pivot_ratio


def factor_solve(
    kkt: KktSystem,
    pivot_threshold: float = 0.1,
    timer: Optional[PhaseTimer] = None,
) -> KktSolution:
    """
    Solve an assembled KKT system.

    Raises:
        SingularSystemError: the system is singular (unobservable network or
            dependent constraints).
    """
    sol, res_norm, ratio = solve_with_refinement(kkt.matrix, kkt.rhs, pivot_threshold, timer)
    n, c = kkt.n, kkt.c
    return KktSolution(
        dx=sol[:n],
        dy=sol[n:2 * n],
        lam=sol[2 * n:2 * n + c],
        mu=sol[2 * n + c:],
        residual=res_norm,
        pivot_ratio=ratio,
    )


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

def _max_abs(matrix: Union[spmatrix, np.ndarray]) -> float:
    if issparse(matrix):
        matrix = csr_matrix(matrix)
        return float(np.max(np.abs(matrix.data))) if matrix.nnz else 0.0
    matrix = np.asarray(matrix)
    return float(np.max(np.abs(matrix))) if matrix.size else 0.0


def gain_property_errors(g: GainSystem) -> dict[str, float]:
    """Max-abs deviation for each of the four gain block properties."""
    return {
        "beta_conjugate": _max_abs(g.beta_x - np.conj(g.beta_xbar)),
        "hermitian": _max_abs(g.g_xbar_x - g.g_xbar_x.conjugate().T),
        "symmetric": _max_abs(g.g_xbar_xbar - g.g_xbar_xbar.T),
        "conjugate_block": _max_abs(g.g_xbar_xbar.conjugate() - g.g_x_x),
    }


def hermitian_error(matrix: spmatrix) -> float:
    """max |A - Aᴴ|."""
    A = csr_matrix(matrix)
    return _max_abs(A - A.conjugate().T)


def swap_permutation(n: int, c: int, k: int) -> np.ndarray:
    """
    Index map that exchanges Δx with Δy and λ[:k] with μ; real-row
    multipliers map to themselves.
    """
    return np.concatenate([
        np.arange(n, 2 * n),
        np.arange(n),
        np.arange(2 * n + c, 2 * n + c + k),
        np.arange(2 * n + k, 2 * n + c),
        np.arange(2 * n, 2 * n + k),
    ])


def swap_symmetry_error(kkt: KktSystem) -> float:
    """max |A - P conj(A) Pᵀ| for the block swap P of swap_permutation."""
    perm = swap_permutation(kkt.n, kkt.c, kkt.k)
    A = csr_matrix(kkt.matrix)
    swapped = A.conjugate()[perm][:, perm]
    return _max_abs(A - swapped)


def conjugate_pair_error(sol: KktSolution) -> float:
    """
    Largest violation of Δy = conj(Δx), μ = conj(λ[:k]) and real-row
    multipliers being real.
    """
    k = sol.mu.size
    return max(
        _max_abs(sol.dy - np.conj(sol.dx)),
        _max_abs(sol.mu - np.conj(sol.lam[:k])),
        _max_abs(sol.lam[k:].imag),
    )


def matrix_stats(matrix: spmatrix) -> tuple[int, int]:
    """
    (dimension, non-zeros of the upper triangle incl. diagonal of the
    symmetrised pattern).
    """
    A = csr_matrix(matrix)
    A.eliminate_zeros()
    pattern = csr_matrix((np.ones(A.nnz, dtype=np.int8), A.indices, A.indptr), shape=A.shape)
    pattern = pattern + pattern.T
    return A.shape[0], int(triu(pattern).nnz)


def dump_coordinates(matrix: spmatrix, path: Union[str, Path]) -> Path:
    """Write a matrix as `row col re im` lines (0-based indices)."""
    path = Path(path)
    A = coo_matrix(matrix)
    table = np.column_stack([A.row, A.col, A.data.real, A.data.imag]) if A.nnz else np.zeros((0, 4))
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g", "%.17g"],
               header=f"{A.shape[0]} {A.shape[1]} {A.nnz}")
    return path
