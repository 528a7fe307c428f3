"""Sparse kernels, dense Cholesky and the preconditioned CG driver.

Matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted, unique
column indices, no stored zeros). A preconditioner is anything callable as
``z = precond(r)`` that applies a fixed SPD operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "PcgReport",
    "IndefiniteError",
    "finalize",
    "spmv",
    "pcg",
    "dense_cholesky_solve",
    "DenseCholesky",
    "jacobi",
    "identity",
    "symmetry_probe",
    "positivity_probe",
    "write_matrix_market",
    "read_matrix_market",
]


class IndefiniteError(ArithmeticError):
    """Raised when CG meets a non-positive curvature or preconditioner inner product."""


@dataclass
class PcgReport:
    iterations: int = 0
    relative_preconditioned_residual_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def history(self):
        return self.relative_preconditioned_residual_history


def finalize(A, symmetric: bool = False) -> sp.csr_matrix:
    """Return ``A`` as canonical CSR without explicit zeros.

    With ``symmetric=True`` the structure is checked for symmetry.
    """
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    if symmetric and A.shape[0] == A.shape[1]:
        pattern = abs(sp.csr_matrix((np.ones_like(A.data), A.indices, A.indptr), shape=A.shape))
        if (pattern != pattern.T).nnz:
            raise ValueError("matrix is not structurally symmetric")
    return A


def spmv(A, x):
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def identity(r):
    return np.array(r, dtype=np.float64, copy=True)


def jacobi(A):
    """Diagonal scaling preconditioner."""
    d = np.asarray(A.diagonal(), dtype=np.float64)
    if (d <= 0).any():
        raise ValueError("Jacobi needs a positive diagonal")
    inv = 1.0 / d

    def apply(r):
        return inv * r

    return apply


def pcg(A, f, precond=None, tol: float = 1e-8, max_iter: int = 500, callback=None):
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops once ``sqrt(r.z / r0.z0) <= tol`` where ``z = precond(r)``.

    Parameters
    ----------
    A : sparse matrix, dense array or callable
        SPD operator; a callable is applied as ``A(x)``.
    f : array
        Right-hand side.
    precond : callable, optional
        SPD preconditioner; the identity when omitted.
    callback : callable, optional
        Called as ``callback(u)`` after every iteration.

    Returns
    -------
    u : array
    report : PcgReport
    """
    apply_A = A if callable(A) else (lambda x: A @ x)
    apply_P = precond if precond is not None else identity

    f = np.asarray(f, dtype=np.float64)
    u = np.zeros_like(f)
    r = f.copy()
    z = apply_P(r)
    rz = float(r @ z)
    report = PcgReport(relative_preconditioned_residual_history=[1.0])
    if rz < 0:
        raise IndefiniteError("preconditioner is not positive definite")
    if rz == 0.0:
        report.converged = True
        return u, report
    rz0 = rz
    p = z.copy()
    for it in range(1, max_iter + 1):
        q = apply_A(p)
        pq = float(p @ q)
        if pq <= 0:
            raise IndefiniteError(f"p'Ap = {pq:.3e} <= 0 at iteration {it}")
        alpha = rz / pq
        u += alpha * p
        r -= alpha * q
        z = apply_P(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            raise IndefiniteError(f"r'z = {rz_new:.3e} < 0 at iteration {it}")
        rel = math.sqrt(rz_new / rz0)
        report.history.append(rel)
        report.iterations = it
        if callback is not None:
            callback(u)
        if rel <= tol:
            report.converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    return u, report


class DenseCholesky:
    """Cholesky factorization ``A = L L^T`` of a dense SPD matrix."""

    def __init__(self, A):
        A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
        if A.shape[0] == 0:
            self.L = np.zeros((0, 0))
            return
        try:
            self.L = scipy.linalg.cholesky(A, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise IndefiniteError(f"non-positive pivot, matrix is not SPD ({exc})") from None

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if self.n == 0:
            return np.zeros_like(b)
        y = scipy.linalg.solve_triangular(self.L, b, lower=True, check_finite=False)
        return scipy.linalg.solve_triangular(self.L, y, lower=True, trans="T", check_finite=False)

    __call__ = solve


def dense_cholesky_solve(A, b):
    return DenseCholesky(A).solve(b)


def symmetry_probe(apply, n: int, seed: int = 0, trials: int = 3) -> float:
    """Largest relative asymmetry ``|<Px,y> - <x,Py>| / (|Px||y| + |x||Py|)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        px, py = apply(x), apply(y)
        scale = np.linalg.norm(px) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(py)
        worst = max(worst, abs(px @ y - x @ py) / scale)
    return worst


def positivity_probe(apply, n: int, seed: int = 0, trials: int = 3) -> float:
    """Smallest ``<Px, x> / <x, x>`` over random ``x``."""
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(trials):
        x = rng.standard_normal(n)
        vals.append(float(apply(x) @ x) / float(x @ x))
    return min(vals)


def write_matrix_market(path, obj, comment: str = ""):
    """Coordinate MatrixMarket export of a sparse matrix or a vector."""
    if not sp.issparse(obj):
        obj = sp.coo_matrix(np.asarray(obj, dtype=np.float64).reshape(-1, 1))
    scipy.io.mmwrite(str(path), obj, comment=comment, field="real", precision=17)


def read_matrix_market(path):
    """Read a MatrixMarket file; single-column matrices come back as vectors."""
    obj = scipy.io.mmread(str(path))
    if sp.issparse(obj):
        if obj.shape[1] == 1:
            return obj.toarray().ravel()
        return finalize(obj)
    obj = np.asarray(obj)
    return obj.ravel() if obj.ndim == 2 and obj.shape[1] == 1 else obj
