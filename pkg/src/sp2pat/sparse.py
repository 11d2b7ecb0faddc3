"""Sparse storage helpers, 2x2 block systems and linear solvers.

Krylov solvers wrap :mod:`scipy.sparse.linalg` with Jacobi preconditioning
and enforce the residual contract ``||A x - b|| / ||b|| <= tol`` by
recomputing the residual after the solve.  :class:`Factorized` is the fast
path used inside optimization loops, where the same operator is solved many
times (including transposed solves for adjoints).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    """Raised when an iterative solve misses its tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


@dataclass
class BlockSystem2x2:
    a11: sp.spmatrix
    a12: sp.spmatrix
    a21: sp.spmatrix
    a22: sp.spmatrix
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self):
        n = self.a11.shape[0]
        for name in ("a11", "a12", "a21", "a22"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"block {name} has shape {getattr(self, name).shape}, expected {(n, n)}")

    @property
    def n(self) -> int:
        return self.a11.shape[0]

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.a11, self.a12], [self.a21, self.a22]], format="csr")

    def rhs(self) -> np.ndarray:
        n = self.n
        b1 = np.zeros(n) if self.b1 is None else self.b1
        b2 = np.zeros(n) if self.b2 is None else self.b2
        return np.concatenate([b1, b2])


def relative_residual(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / bnorm if bnorm > 0 else r


def _jacobi(A):
    d = A.diagonal().astype(float)
    d[d == 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda v: inv * v, dtype=float)


def _prepare(A, b):
    if isinstance(A, BlockSystem2x2):
        if b is None:
            b = A.rhs()
        A = A.matrix()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A {A.shape}, b {b.shape}")
    return A, b


def solve_spd(A, b, tol: float = DEFAULT_TOL, maxiter: int | None = None) -> np.ndarray:
    """Preconditioned conjugate gradients for symmetric positive definite ``A``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, b = _prepare(A, b)
    if not np.any(b):
        return np.zeros_like(b)
    n = A.shape[0]
    maxiter = 20 * n if maxiter is None else maxiter
    history = []
    x, info = spla.cg(
        A, b, rtol=0.5 * tol, atol=0.0, maxiter=maxiter, M=_jacobi(A),
        callback=lambda xk: history.append(None),
    )
    res = relative_residual(A, x, b)
    if res > tol:
        raise SolverError(
            f"CG did not reach tol={tol:g} in {len(history)} iterations (residual {res:.3e})",
            residual=res,
        )
    return x


def solve_general(
    A, b=None, tol: float = DEFAULT_TOL, method: str = "gmres", restart: int = 60,
    maxiter: int | None = None,
) -> np.ndarray:
    """Krylov solve for a non-symmetric sparse matrix or :class:`BlockSystem2x2`."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, b = _prepare(A, b)
    if not np.any(b):
        return np.zeros_like(b)
    n = A.shape[0]
    maxiter = 20 * n if maxiter is None else maxiter
    M = _jacobi(A)
    history: list[float] = []
    x = np.zeros_like(b)
    if method == "gmres":
        # scipy counts restart cycles in maxiter
        cycles = max(1, maxiter // restart)
        x, info = spla.gmres(
            A, b, rtol=0.5 * tol, atol=0.0, restart=restart, maxiter=cycles, M=M,
            callback=history.append, callback_type="pr_norm",
        )
    elif method == "bicgstab":
        x, info = spla.bicgstab(
            A, b, rtol=0.5 * tol, atol=0.0, maxiter=maxiter, M=M,
            callback=lambda xk: history.append(relative_residual(A, xk, b)),
        )
    else:
        raise ValueError(f"unknown Krylov method {method!r}")
    res = relative_residual(A, x, b)
    if res > tol:
        # polish once with the other method before giving up
        x2, _ = spla.bicgstab(A, b, x0=x, rtol=0.5 * tol, atol=0.0, maxiter=maxiter, M=M)
        if relative_residual(A, x2, b) < res:
            x, res = x2, relative_residual(A, x2, b)
    if res > tol or not np.all(np.isfinite(x)):
        raise SolverError(
            f"{method} did not reach tol={tol:g} (residual {res:.3e})", residual=res, history=history
        )
    return x


class Factorized:
    """Sparse LU factorization supporting plain and transposed solves."""

    def __init__(self, A):
        if isinstance(A, BlockSystem2x2):
            A = A.matrix()
        self.matrix = sp.csc_matrix(A)
        self._lu = spla.splu(self.matrix)

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, b) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))

    def solve_transpose(self, b) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float), trans="T")


class KrylovSolver:
    """Same interface as :class:`Factorized`, backed by Krylov iterations."""

    def __init__(self, A, tol: float = DEFAULT_TOL, symmetric: bool = False):
        if isinstance(A, BlockSystem2x2):
            A = A.matrix()
        self.matrix = sp.csr_matrix(A)
        self._matrix_t = None
        self.tol = tol
        self.symmetric = symmetric

    @property
    def shape(self):
        return self.matrix.shape

    def _run(self, A, b):
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self._run(A, col) for col in b.T])
        if self.symmetric:
            return solve_spd(A, b, self.tol)
        return solve_general(A, b, self.tol, method="bicgstab")

    def solve(self, b) -> np.ndarray:
        return self._run(self.matrix, b)

    def solve_transpose(self, b) -> np.ndarray:
        if self.symmetric:
            return self._run(self.matrix, b)
        if self._matrix_t is None:
            self._matrix_t = self.matrix.T.tocsr()
        return self._run(self._matrix_t, b)


def make_solver(A, method: str = "direct", tol: float = DEFAULT_TOL, symmetric: bool = False):
    if method == "direct":
        return Factorized(A)
    if method == "krylov":
        return KrylovSolver(A, tol=tol, symmetric=symmetric)
    raise ValueError(f"unknown solver method {method!r}")
