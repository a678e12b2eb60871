"""Sparse linear algebra: CSR carriers, Jacobi-preconditioned CG and a
Schur-complement solver for symmetric saddle-point systems.

CSR storage is :class:`scipy.sparse.csr_matrix` kept in canonical form
(sorted column indices, no duplicates). The solvers are written out here
because their stopping rules and failure modes are part of the contract.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sps

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """An iterative solve failed; carries the last iterate and residual."""

    def __init__(self, message, x=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class PreconditionerError(ValueError):
    """Jacobi preconditioner is undefined (zero or negative diagonal)."""


def as_csr(A) -> sps.csr_matrix:
    """Canonical CSR copy: float64, sorted indices, duplicates summed."""
    A = sps.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    return A


def triplets_to_csr(rows, cols, vals, shape) -> sps.csr_matrix:
    """Merge COO triplets into CSR with a fixed summation order.

    Duplicates are summed in input order after a stable sort by (row, col),
    so identical input gives bitwise-identical output.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    nrows, ncols = shape
    if rows.size == 0:
        return sps.csr_matrix(shape, dtype=float)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    key = rows * ncols + cols
    start = np.concatenate(([True], key[1:] != key[:-1]))
    idx = np.nonzero(start)[0]
    summed = np.zeros(idx.size)
    # sequential per-entry accumulation; np.add.reduceat may reassociate
    seg = np.cumsum(start) - 1
    np.add.at(summed, seg, vals)
    urows, ucols = rows[idx], cols[idx]
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    indptr = np.cumsum(indptr)
    return sps.csr_matrix((summed, ucols, indptr), shape=shape)


def _check_vector(x, n, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != n:
        raise ValueError(f"{name} has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def spmv(A, x) -> np.ndarray:
    """y = A x, accumulating each row in ascending column order."""
    A = sps.csr_matrix(A)
    x = _check_vector(x, A.shape[1])
    return A @ x


def is_symmetric(A, tol: float = 0.0) -> bool:
    A = sps.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        return False
    diff = abs(A - A.T)
    return diff.nnz == 0 or diff.max() <= tol * max(abs(A).max(), 1e-300)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # true relative residual ||b - A x|| / ||b||


def cg_solve(A, b, tol: float = 1e-12, max_iter: int | None = None, x0=None,
             check_symmetry: bool = False) -> CGResult:
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops when the relative residual ``||b - A x|| / ||b||`` is below ``tol``.
    The recursive residual is replaced by the true one before accepting, so
    the reported residual is the recomputed value.
    """
    A = sps.csr_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = _check_vector(b, n, "b")
    if check_symmetry and not is_symmetric(A, 1e-13):
        raise ValueError("matrix is not symmetric")
    if max_iter is None:
        max_iter = max(10 * n, 50)
    bnorm = np.linalg.norm(b)
    if n == 0 or bnorm == 0.0:
        return CGResult(np.zeros(n), 0, 0.0)
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise PreconditionerError(f"Jacobi preconditioner needs a positive diagonal; "
                                  f"row {int(np.argmin(diag))} has {diag.min()!r}")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else _check_vector(x0, n, "x0").copy()
    r = b - A @ x
    threshold = tol * bnorm
    it = 0
    while True:
        rnorm = np.linalg.norm(r)
        if rnorm <= threshold:
            true_r = b - A @ x
            rnorm = np.linalg.norm(true_r)
            if rnorm <= threshold:
                return CGResult(x, it, rnorm / bnorm)
            r = true_r  # recursive residual drifted; restart from the true one
        if it >= max_iter:
            break
        z = inv_diag * r
        p = z
        rz = r @ z
        restart = False
        while it < max_iter:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0.0:
                raise SolverError("CG breakdown: matrix is not positive definite",
                                  x, np.linalg.norm(b - A @ x) / bnorm, it)
            step = rz / pAp
            x = x + step * p
            r = r - step * Ap
            it += 1
            if np.linalg.norm(r) <= threshold:
                restart = True
                break
            z = inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if not restart:
            break
    res = np.linalg.norm(b - A @ x) / bnorm
    raise SolverError(f"CG did not converge in {max_iter} iterations "
                      f"(relative residual {res:.3e}, tol {tol:.1e})", x, res, it)


@dataclass
class SchurResult:
    x: np.ndarray
    p: np.ndarray
    outer_iterations: int
    inner_iterations: int
    primal_residual: float  # ||M x + B^T p - b||
    constraint_residual: float  # ||B x - c||


def schur_solve(M, Bt, b, c, tol: float = 1e-10, max_iter: int | None = None) -> SchurResult:
    """Solve ``[[M, B^T], [B, 0]] [x; p] = [b; c]`` with ``M`` SPD.

    Outer CG runs on ``S = B M^{-1} B^T`` (applied implicitly, inner CG at
    ``tol / 100``), preconditioned by ``B diag(M)^{-1} B^T``'s diagonal.
    On return ``||B x - c|| <= tol (1 + ||c||)`` and
    ``||M x + B^T p - b|| <= tol (1 + ||b||)``.
    """
    M = sps.csr_matrix(M)
    Bt = sps.csr_matrix(Bt)
    B = Bt.T.tocsr()
    n, m = Bt.shape
    if M.shape != (n, n):
        raise ValueError(f"M has shape {M.shape}, expected ({n}, {n})")
    b = _check_vector(b, n, "b")
    c = _check_vector(c, m, "c")
    if max_iter is None:
        max_iter = max(10 * m, 50)
    inner_tol = tol / 100.0
    inner_its = 0

    def minv(v):
        nonlocal inner_its
        res = cg_solve(M, v, inner_tol)
        inner_its += res.iterations
        return res.x

    mdiag = M.diagonal()
    if np.any(mdiag <= 0):
        raise PreconditionerError("M needs a positive diagonal")
    sdiag = np.asarray((B.multiply(B)) @ (1.0 / mdiag)).ravel()
    if np.any(sdiag <= 0):
        raise SolverError("constraint matrix has an empty row; B is rank deficient")
    inv_sdiag = 1.0 / sdiag

    # S p = B M^{-1} b - c ;  x = M^{-1} (b - B^T p)
    g = B @ minv(b) - c
    gnorm = np.linalg.norm(g)
    p = np.zeros(m)
    target = 0.1 * tol * (1.0 + np.linalg.norm(c))
    r = g.copy()
    z = inv_sdiag * r
    d = z.copy()
    rz = r @ z
    it = 0
    best = np.inf
    stall = 0
    while np.linalg.norm(r) > target and gnorm > 0:
        if it >= max_iter:
            raise SolverError(f"Schur CG did not converge in {max_iter} iterations",
                              p, np.linalg.norm(r), it)
        Sd = B @ minv(Bt @ d)
        dSd = d @ Sd
        if dSd <= 1e-14 * (d @ d) * sdiag.max():
            raise SolverError("Schur complement is singular: B is rank deficient",
                              p, np.linalg.norm(r), it)
        step = rz / dSd
        p = p + step * d
        r = r - step * Sd
        it += 1
        rn = np.linalg.norm(r)
        if rn < 0.5 * best:
            best, stall = rn, 0
        else:
            stall += 1
            if stall > max(50, m):
                raise SolverError("Schur CG stagnated (rank-deficient constraint?)",
                                  p, rn, it)
        z = inv_sdiag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new

    x = minv(b - Bt @ p)
    primal = float(np.linalg.norm(M @ x + Bt @ p - b))
    constraint = float(np.linalg.norm(B @ x - c))
    if primal > tol * (1 + np.linalg.norm(b)) or constraint > tol * (1 + np.linalg.norm(c)):
        raise SolverError(f"Schur solve missed tolerance: primal {primal:.3e}, "
                          f"constraint {constraint:.3e}", x, max(primal, constraint), it)
    logger.debug("schur_solve: %d outer, %d inner iterations", it, inner_its)
    return SchurResult(x, p, it, inner_its, primal, constraint)


def matrix_market(A) -> str:
    """Coordinate MatrixMarket text (1-based, ``real general``) for debugging."""
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, sps.coo_matrix(A), field="real", symmetry="general", precision=17)
    return buf.getvalue().decode()
